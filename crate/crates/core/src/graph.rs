//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] owns every value produced during a forward pass. Operations
//! append nodes, so node order is a topological order by construction, and
//! [`Graph::backward`] walks it once in reverse.
//!
//! Gradient semantics: intermediate gradients are recomputed on each call to
//! `backward`, while leaf gradients accumulate into the leaf tensor's `grad`
//! buffer until [`Graph::zero_grad`] is called.
//!
//! Broadcasting is limited to scalar-tensor ops, trailing-shape bias adds
//! ([`Graph::add_trailing`]) and leading-axis repeats ([`Graph::repeat0`]).

use crate::error::{Error, Result};
use crate::tensor::{gelu, gelu_grad, gemm, inverse_permutation, permute_data, permuted_shape, softmax_rows_into, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Bmm(Var, Var),
    Add(Var, Var),
    AddTrailing(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    Gelu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Repeat0 { x: Var, times: usize },
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Elementwise { x: Var, deriv: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Matmul(a, b) | Bmm(a, b) | Add(a, b) | AddTrailing(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(x, _) | AddScalar(x) | Exp(x) | Log(x) | ClampMin(x, _) | Gelu(x) | Reshape(x)
            | Permute(x, _) | SumAll(x) | MeanAll(x) | SumLast(x) | Softmax(x) => vec![*x],
            Narrow { x, .. } | Repeat0 { x, .. } | Elementwise { x, .. } => vec![*x],
            Concat { inputs, .. } => inputs.clone(),
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Matmul(..) => "matmul",
            Bmm(..) => "bmm",
            Add(..) => "add",
            AddTrailing(..) => "add_trailing",
            Mul(..) => "mul",
            Scale(..) => "scale",
            AddScalar(..) => "add_scalar",
            Exp(..) => "exp",
            Log(..) => "log",
            ClampMin(..) => "clamp_min",
            Gelu(..) => "gelu",
            Reshape(..) => "reshape",
            Permute(..) => "permute",
            Narrow { .. } => "narrow",
            Concat { .. } => "concat",
            Repeat0 { .. } => "repeat0",
            SumAll(..) => "sum",
            MeanAll(..) => "mean",
            SumLast(..) => "sum_last",
            Softmax(..) => "softmax",
            LayerNorm { .. } => "layernorm",
            Elementwise { .. } => "elementwise",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `tensor` as a leaf; it tracks gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf (None until a backward pass reaches it).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, data: Vec<f64>, op: Op) -> Var {
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(Tensor::new(&shape, data).expect("same shape"), op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `[m × k] · [k × n] → [m × n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::shape(format!(
                    "matmul: cannot multiply {sa:?} by {sb:?}"
                )))
            }
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::Matmul(a, b), rg))
    }

    /// Batched matmul `[b × m × k] · [b × k × n] → [b × m × n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (bs, m, k, n) = match (sa, sb) {
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return Err(Error::shape(format!("bmm: cannot multiply {sa:?} by {sb:?}"))),
        };
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&[bs, m, n], out)?, Op::Bmm(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.unary_with(a, out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.unary_with(a, out, Op::Mul(a, b), rg))
    }

    fn unary_with(&mut self, like: Var, data: Vec<f64>, op: Op, rg: bool) -> Var {
        let shape = self.shape(like).to_vec();
        self.push(Tensor::new(&shape, data).expect("same shape"), op, rg)
    }

    /// `x + b` where `b`'s shape equals the trailing dimensions of `x`
    /// (per-row bias, positional embedding table).
    pub fn add_trailing(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(Error::shape(format!(
                "add_trailing: {sb:?} is not a suffix of {sx:?}"
            )));
        }
        let tail = self.value(b).numel();
        let bd = self.data(b);
        let out = self
            .data(x)
            .chunks_exact(tail)
            .flat_map(|row| row.iter().zip(bd).map(|(u, v)| u + v))
            .collect();
        let rg = self.any_grad(&[x, b]);
        Ok(self.unary_with(x, out, Op::AddTrailing(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * s).collect();
        self.unary(x, out, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = self.data(x).iter().map(|v| v + s).collect();
        self.unary(x, out, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|v| v.exp()).collect();
        self.unary(x, out, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|v| v.ln()).collect();
        self.unary(x, out, Op::Log(x))
    }

    /// `max(x, floor)`; gradient flows only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let out = self.data(x).iter().map(|&v| v.max(floor)).collect();
        self.unary(x, out, Op::ClampMin(x, floor))
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| gelu(v)).collect();
        self.unary(x, out, Op::Gelu(x))
    }

    /// Custom elementwise op from a value function and its derivative.
    pub fn map_elementwise(&mut self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var {
        let xs = self.data(x);
        let out = xs.iter().map(|&v| f(v)).collect();
        let deriv = xs.iter().map(|&v| df(v)).collect();
        self.unary(x, out, Op::Elementwise { x, deriv })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = permuted_shape(self.shape(x), axes)?;
        let data = permute_data(self.data(x), self.shape(x), axes);
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Permute(x, axes.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape(format!(
                "transpose needs rank >= 2, got {:?}",
                self.shape(x)
            )));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "narrow: [{start}, {}) out of range on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_at_axis(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(&new_shape, out)?, Op::Narrow { x, axis, start }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!("concat: {s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let d = self.shape(v)[axis];
                let src = self.data(v);
                out.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Repeats a tensor whose leading dimension is 1 `times` times along it.
    pub fn repeat0(&mut self, x: Var, times: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.first() != Some(&1) || times == 0 {
            return Err(Error::shape(format!("repeat0 needs leading dim 1, got {shape:?}")));
        }
        let src = self.data(x);
        let out: Vec<f64> = (0..times).flat_map(|_| src.iter().copied()).collect();
        let mut new_shape = shape;
        new_shape[0] = times;
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(&new_shape, out)?, Op::Repeat0 { x, times }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Sums over the last axis: `[..., d] → [...]` (`[d] → [1]`).
    pub fn sum_last(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("rank >= 1");
        let out: Vec<f64> = self.data(x).chunks_exact(d).map(|r| r.iter().sum()).collect();
        let new_shape = if shape.len() == 1 {
            vec![1]
        } else {
            shape[..shape.len() - 1].to_vec()
        };
        let rg = self.requires_grad(x);
        self.push(Tensor::new(&new_shape, out).expect("shape"), Op::SumLast(x), rg)
    }

    /// Softmax over the last axis with max-subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let d = *self.shape(x).last().expect("rank >= 1");
        let xs = self.data(x);
        if xs.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax_rows: NaN input".into()));
        }
        let mut out = vec![0.0; xs.len()];
        softmax_rows_into(xs, d, &mut out);
        Ok(self.unary(x, out, Op::Softmax(x)))
    }

    /// Per-row normalization over the last axis followed by `gamma * xhat + beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().expect("rank >= 1");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(format!(
                "layernorm: input {:?} with gamma {:?} and beta {:?}",
                self.shape(x),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("layernorm eps must be positive, got {eps}")));
        }
        let (g, b) = (self.data(gamma), self.data(beta));
        let xs = self.data(x);
        let rows = xs.len() / d;
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.unary_with(
            x,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// `x · w + b` over the last axis of `x`; `w` is `[in × out]`, `b` is `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let in_dim = *shape.last().expect("rank >= 1");
        let rows = self.value(x).numel() / in_dim;
        let flat = if shape.len() == 2 { x } else { self.reshape(x, &[rows, in_dim])? };
        let y = self.matmul(flat, w)?;
        let y = self.add_trailing(y, b)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.shape(w)[1];
        self.reshape(y, &out_shape)
    }

    /// Computes d`loss`/d`leaf` for every gradient-tracking leaf reachable from
    /// `loss` and adds it into that leaf's `grad` buffer.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            self.backward_op(i, &g, &mut grads);
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_op(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.data(*b), true, &mut da, false);
                    self.send(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.data(*a), true, g, false, &mut db, false);
                    self.send(grads, *b, db);
                }
            }
            Op::Bmm(a, b) => {
                let sa = self.shape(*a);
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.shape(*b)[2];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    let bd = self.data(*b);
                    for t in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            &g[t * m * n..(t + 1) * m * n],
                            false,
                            &bd[t * k * n..(t + 1) * k * n],
                            true,
                            &mut da[t * m * k..(t + 1) * m * k],
                            false,
                        );
                    }
                    self.send(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    let ad = self.data(*a);
                    for t in 0..bs {
                        gemm(
                            k,
                            m,
                            n,
                            &ad[t * m * k..(t + 1) * m * k],
                            true,
                            &g[t * m * n..(t + 1) * m * n],
                            false,
                            &mut db[t * k * n..(t + 1) * k * n],
                            false,
                        );
                    }
                    self.send(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.to_vec());
                self.send(grads, *b, g.to_vec());
            }
            Op::AddTrailing(x, b) => {
                self.send(grads, *x, g.to_vec());
                if self.requires_grad(*b) {
                    let tail = self.value(*b).numel();
                    let mut db = vec![0.0; tail];
                    for row in g.chunks_exact(tail) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.send(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let d = g.iter().zip(self.data(*b)).map(|(g, v)| g * v).collect();
                    self.send(grads, *a, d);
                }
                if self.requires_grad(*b) {
                    let d = g.iter().zip(self.data(*a)).map(|(g, v)| g * v).collect();
                    self.send(grads, *b, d);
                }
            }
            Op::Scale(x, s) => self.send(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.send(grads, *x, g.to_vec()),
            Op::Exp(x) => self.send(grads, *x, g.iter().zip(y).map(|(g, y)| g * y).collect()),
            Op::Log(x) => {
                let d = g.iter().zip(self.data(*x)).map(|(g, v)| g / v).collect();
                self.send(grads, *x, d)
            }
            Op::ClampMin(x, floor) => {
                let d = g
                    .iter()
                    .zip(self.data(*x))
                    .map(|(g, &v)| if v > *floor { *g } else { 0.0 })
                    .collect();
                self.send(grads, *x, d)
            }
            Op::Gelu(x) => {
                let d = g.iter().zip(self.data(*x)).map(|(g, &v)| g * gelu_grad(v)).collect();
                self.send(grads, *x, d)
            }
            Op::Elementwise { x, deriv } => {
                self.send(grads, *x, g.iter().zip(deriv).map(|(g, d)| g * d).collect())
            }
            Op::Permute(x, axes) => {
                let inv = inverse_permutation(axes);
                let d = permute_data(g, node.value.shape(), &inv);
                self.send(grads, *x, d)
            }
            Op::Narrow { x, axis, start } => {
                let in_shape = self.shape(*x);
                let (outer, dim, inner) = split_at_axis(in_shape, *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    let dst = o * dim * inner + start * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.send(grads, *x, d)
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_at_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let dv = self.shape(v)[*axis];
                    if self.requires_grad(v) {
                        let mut d = Vec::with_capacity(outer * dv * inner);
                        for o in 0..outer {
                            let s = o * total * inner + offset * inner;
                            d.extend_from_slice(&g[s..s + dv * inner]);
                        }
                        self.send(grads, v, d);
                    }
                    offset += dv;
                }
            }
            Op::Repeat0 { x, times } => {
                let n = self.value(*x).numel();
                let mut d = vec![0.0; n];
                for t in 0..*times {
                    d.iter_mut()
                        .zip(&g[t * n..(t + 1) * n])
                        .for_each(|(a, b)| *a += b);
                }
                self.send(grads, *x, d)
            }
            Op::SumAll(x) => self.send(grads, *x, vec![g[0]; self.value(*x).numel()]),
            Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                self.send(grads, *x, vec![g[0] / n as f64; n])
            }
            Op::SumLast(x) => {
                let d = *self.shape(*x).last().unwrap();
                let out = g.iter().flat_map(|&v| std::iter::repeat_n(v, d)).collect();
                self.send(grads, *x, out)
            }
            Op::Softmax(x) => {
                let d = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks_exact(d).zip(g.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.send(grads, *x, dx)
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.shape(*gamma)[0];
                if self.requires_grad(*beta) || self.requires_grad(*gamma) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                            db[j] += gr[j];
                        }
                    }
                    self.send(grads, *gamma, dg);
                    self.send(grads, *beta, db);
                }
                if self.requires_grad(*x) {
                    let gam = self.data(*gamma);
                    let mut dx = vec![0.0; g.len()];
                    let mut dh = vec![0.0; d];
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            dh[j] = gr[j] * gam[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            dx[r * d + j] = rs * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    self.send(grads, *x, dx);
                }
            }
        }
    }
}

/// `(product of dims before axis, dims[axis], product of dims after axis)`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
