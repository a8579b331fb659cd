//! Vision Transformer encoder and linear projection head.
//!
//! Layout: patchify, linear patch embedding, prepend CLS token, add learned
//! positional embeddings, `depth` pre-norm blocks (attention then MLP, each
//! with a residual), final layernorm. The CLS row is the image feature and the
//! projection head maps it to `proj_dim` logits.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const LAYERNORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Output dimension `K` of the projection head.
    pub proj_dim: usize,
}

impl ModelConfig {
    /// Default desk-scale encoder.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 64,
            patch_size: 8,
            channels: 3,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            proj_dim: 256,
        }
    }

    /// Small encoder for fast tests.
    pub fn micro() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            embed_dim: 32,
            depth: 2,
            heads: 2,
            mlp_ratio: 4,
            proj_dim: 64,
        }
    }

    /// Two-block encoder small enough for an exhaustive finite-difference check.
    pub fn nano() -> Self {
        ModelConfig {
            image_size: 8,
            patch_size: 4,
            channels: 3,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            proj_dim: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("channels", self.channels),
            ("embed_dim", self.embed_dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("proj_dim", self.proj_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!(
                "model.channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Every parameter name with its shape, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let h = self.mlp_dim();
        let mut v = vec![
            ("patch_embed.weight".to_string(), vec![self.patch_dim(), d]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("cls_token".to_string(), vec![1, 1, d]),
            ("pos_embed".to_string(), vec![self.num_patches() + 1, d]),
        ];
        for b in 0..self.depth {
            let p = |s: &str| format!("blocks.{b}.{s}");
            v.extend([
                (p("norm1.weight"), vec![d]),
                (p("norm1.bias"), vec![d]),
                (p("attn.qkv.weight"), vec![d, 3 * d]),
                (p("attn.qkv.bias"), vec![3 * d]),
                (p("attn.proj.weight"), vec![d, d]),
                (p("attn.proj.bias"), vec![d]),
                (p("norm2.weight"), vec![d]),
                (p("norm2.bias"), vec![d]),
                (p("mlp.fc1.weight"), vec![d, h]),
                (p("mlp.fc1.bias"), vec![h]),
                (p("mlp.fc2.weight"), vec![h, d]),
                (p("mlp.fc2.bias"), vec![d]),
            ]);
        }
        v.extend([
            ("norm.weight".to_string(), vec![d]),
            ("norm.bias".to_string(), vec![d]),
            ("head.weight".to_string(), vec![d, self.proj_dim]),
            ("head.bias".to_string(), vec![self.proj_dim]),
        ]);
        v
    }
}

/// Named parameter tensors for one encoder plus projection head.
#[derive(Clone, Debug)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Wraps an existing tensor table, checking it against `config`.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != tensors.len() {
            return Err(Error::Consistency(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Consistency(format!(
                        "{name}: expected shape {shape:?}, found {:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Consistency(format!("missing parameter {name}"))),
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::clear_grad);
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.tensors
            .values_mut()
            .for_each(|t| t.set_requires_grad(requires_grad));
    }

    /// Same names, shapes and bit patterns.
    pub fn bits_eq(&self, other: &ModelParams) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bits_eq(b))
    }

    pub fn same_structure(&self, other: &ModelParams) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape())
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }
}

/// Deep copy; the copy shares nothing with `src`.
pub fn clone_params(src: &ModelParams) -> ModelParams {
    src.clone()
}

/// Normal(0, std) truncated to ±2 std by rejection.
pub(crate) fn trunc_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.param_shapes() {
        let n: usize = shape.iter().product();
        let data = if name.ends_with("norm1.weight")
            || name.ends_with("norm2.weight")
            || name == "norm.weight"
        {
            vec![1.0; n]
        } else if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            (0..n).map(|_| trunc_normal(&mut rng, INIT_STD)).collect()
        };
        tensors.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}

/// Splits a `[channels × H × W]` image into non-overlapping patches:
/// `[num_patches × channels·p²]`, patches in row-major order, each flattened
/// channel-major.
pub fn patchify(image: &Tensor, patch_size: usize) -> Result<Tensor> {
    let [c, h, w] = match image.shape() {
        [c, h, w] => [*c, *h, *w],
        s => return Err(Error::shape(format!("patchify expects [C, H, W], got {s:?}"))),
    };
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::shape(format!(
            "image {h}x{w} is not divisible into {patch_size}x{patch_size} patches"
        )));
    }
    let (ph, pw) = (h / patch_size, w / patch_size);
    let pd = c * patch_size * patch_size;
    let src = image.data();
    let mut out = Vec::with_capacity(ph * pw * pd);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                for y in 0..patch_size {
                    let row = (ch * h + py * patch_size + y) * w + px * patch_size;
                    out.extend_from_slice(&src[row..row + patch_size]);
                }
            }
        }
    }
    Tensor::new(&[ph * pw, pd], out)
}

/// `[B × C × S × S]` batch to `[B × T × C·p²]` patches.
pub fn patchify_batch(batch: &Tensor, config: &ModelConfig) -> Result<Tensor> {
    let s = config.image_size;
    let c = config.channels;
    match batch.shape() {
        [_, bc, bh, bw] if *bc == c && *bh == s && *bw == s => {}
        other => {
            return Err(Error::shape(format!(
                "expected batch [B, {c}, {s}, {s}], got {other:?}"
            )))
        }
    }
    let b = batch.shape()[0];
    let per = c * s * s;
    let mut out = Vec::with_capacity(batch.numel());
    for i in 0..b {
        let img = Tensor::new(&[c, s, s], batch.data()[i * per..(i + 1) * per].to_vec())?;
        out.extend(patchify(&img, config.patch_size)?.into_data());
    }
    Tensor::new(&[b, config.num_patches(), config.patch_dim()], out)
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::shape("stack of zero tensors"))?;
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::shape(format!(
                "stack: {:?} vs {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(&shape, data)
}

/// Parameters recorded as graph leaves.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Records every parameter in `g`; gradients are tracked iff `track_grad`.
    pub fn bind(g: &mut Graph, params: &ModelParams, track_grad: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let mut t = t.clone();
                t.clear_grad();
                let v = if track_grad { g.param(t) } else { g.constant(t) };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Pairs parameter names with already-recorded leaves.
    pub fn from_vars(names: impl IntoIterator<Item = String>, vars: &[Var]) -> Self {
        BoundParams {
            vars: names.into_iter().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Adds the graph's leaf gradients into `params`' grad buffers.
    pub fn accumulate_into(&self, g: &Graph, params: &mut ModelParams) -> Result<()> {
        for (name, &v) in &self.vars {
            let t = params
                .get_mut(name)
                .ok_or_else(|| Error::Consistency(format!("unknown parameter {name}")))?;
            match g.grad(v) {
                Some(grad) => t.accumulate_grad(grad)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[B × embed_dim]` CLS features after the final layernorm.
    pub features: Var,
    /// `[B × proj_dim]`.
    pub logits: Var,
    /// Post-softmax attention per block, `[B·heads × T+1 × T+1]`.
    pub attentions: Vec<Var>,
}

/// Encoder forward over pre-patchified input `[B × T × patch_dim]`.
pub fn forward_graph(
    g: &mut Graph,
    config: &ModelConfig,
    p: &BoundParams,
    patches: Var,
) -> Result<ForwardVars> {
    let (b, t) = match g.shape(patches) {
        [b, t, pd] if *t == config.num_patches() && *pd == config.patch_dim() => (*b, *t),
        s => {
            return Err(Error::shape(format!(
                "expected patches [B, {}, {}], got {s:?}",
                config.num_patches(),
                config.patch_dim()
            )))
        }
    };
    let d = config.embed_dim;
    let tokens = g.linear(patches, p.var("patch_embed.weight"), p.var("patch_embed.bias"))?;
    let cls = g.repeat0(p.var("cls_token"), b)?;
    let mut x = g.concat(&[cls, tokens], 1)?;
    x = g.add_trailing(x, p.var("pos_embed"))?;
    let n = t + 1;
    let mut attentions = Vec::with_capacity(config.depth);
    for blk in 0..config.depth {
        let name = |s: &str| format!("blocks.{blk}.{s}");
        let h = g.layernorm(x, p.var(&name("norm1.weight")), p.var(&name("norm1.bias")), LAYERNORM_EPS)?;
        let (a, attn) = attention(g, config, p, blk, h, b, n)?;
        attentions.push(attn);
        x = g.add(x, a)?;
        let h = g.layernorm(x, p.var(&name("norm2.weight")), p.var(&name("norm2.bias")), LAYERNORM_EPS)?;
        let h = g.linear(h, p.var(&name("mlp.fc1.weight")), p.var(&name("mlp.fc1.bias")))?;
        let h = g.gelu(h);
        let h = g.linear(h, p.var(&name("mlp.fc2.weight")), p.var(&name("mlp.fc2.bias")))?;
        x = g.add(x, h)?;
    }
    let x = g.layernorm(x, p.var("norm.weight"), p.var("norm.bias"), LAYERNORM_EPS)?;
    let cls_out = g.narrow(x, 1, 0, 1)?;
    let features = g.reshape(cls_out, &[b, d])?;
    let logits = g.linear(features, p.var("head.weight"), p.var("head.bias"))?;
    Ok(ForwardVars {
        features,
        logits,
        attentions,
    })
}

fn attention(
    g: &mut Graph,
    config: &ModelConfig,
    p: &BoundParams,
    blk: usize,
    h: Var,
    b: usize,
    n: usize,
) -> Result<(Var, Var)> {
    let d = config.embed_dim;
    let heads = config.heads;
    let dh = d / heads;
    let name = |s: &str| format!("blocks.{blk}.{s}");
    let qkv = g.linear(h, p.var(&name("attn.qkv.weight")), p.var(&name("attn.qkv.bias")))?;
    let qkv = g.reshape(qkv, &[b, n, 3, heads, dh])?;
    let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
    let qkv = g.reshape(qkv, &[3, b * heads, n, dh])?;
    let mut split = [qkv; 3];
    for (i, s) in split.iter_mut().enumerate() {
        let part = g.narrow(qkv, 0, i, 1)?;
        *s = g.reshape(part, &[b * heads, n, dh])?;
    }
    let [q, k, v] = split;
    let kt = g.transpose(k)?;
    let scores = g.bmm(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let attn = g.softmax_rows(scores)?;
    let out = g.bmm(attn, v)?;
    let out = g.reshape(out, &[b, heads, n, dh])?;
    let out = g.permute(out, &[0, 2, 1, 3])?;
    let out = g.reshape(out, &[b, n, d])?;
    let out = g.linear(out, p.var(&name("attn.proj.weight")), p.var(&name("attn.proj.bias")))?;
    Ok((out, attn))
}

/// Gradient-free forward over an image batch `[B × C × S × S]`.
/// Returns `(features [B × embed_dim], logits [B × proj_dim])`.
pub fn forward(params: &ModelParams, batch: &Tensor) -> Result<(Tensor, Tensor)> {
    let patches = patchify_batch(batch, params.config())?;
    forward_patches(params, &patches)
}

pub fn forward_patches(params: &ModelParams, patches: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let x = g.constant(patches.clone());
    let out = forward_graph(&mut g, params.config(), &bound, x)?;
    let strip = |t: &Tensor| t.clone().with_requires_grad(false);
    Ok((strip(g.value(out.features)), strip(g.value(out.logits))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_divisibility() {
        let mut c = ModelConfig::tiny();
        c.embed_dim = 65;
        c.heads = 4;
        assert!(matches!(init_params(&c, 0), Err(Error::Config(_))));
        let mut c = ModelConfig::tiny();
        c.image_size = 60;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::micro();
        c.depth = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn patch_counts() {
        let img = Tensor::zeros(&[3, 64, 64]);
        assert_eq!(patchify(&img, 8).unwrap().shape(), &[64, 192]);
        let img = Tensor::zeros(&[3, 224, 224]);
        assert_eq!(patchify(&img, 16).unwrap().shape(), &[196, 768]);
        let img = Tensor::zeros(&[3, 65, 64]);
        assert!(matches!(patchify(&img, 8), Err(Error::Shape(_))));
    }

    #[test]
    fn patch_layout_is_channel_major() {
        // 2 channels, 2x4 image, patch 2 -> patches (0,0) and (0,1)
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let img = Tensor::new(&[2, 2, 4], data).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[2, 8]);
        assert_eq!(&p.data()[..8], &[0.0, 1.0, 4.0, 5.0, 8.0, 9.0, 12.0, 13.0]);
        assert_eq!(&p.data()[8..], &[2.0, 3.0, 6.0, 7.0, 10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let c = ModelConfig::micro();
        let a = init_params(&c, 7).unwrap();
        let b = init_params(&c, 7).unwrap();
        let other = init_params(&c, 8).unwrap();
        assert!(a.bits_eq(&b));
        assert!(!a.bits_eq(&other));
        assert!(a.same_structure(&other));
        let w = a.get("patch_embed.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        assert!(a.get("head.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clone_is_deep() {
        let a = init_params(&ModelConfig::nano(), 1).unwrap();
        let mut b = clone_params(&a);
        assert!(a.bits_eq(&b));
        b.get_mut("head.weight").unwrap().data_mut()[0] += 1.0;
        assert!(!a.bits_eq(&b));
        let c = clone_params(&clone_params(&a));
        assert!(c.bits_eq(&a));
    }

    #[test]
    fn forward_shapes_and_wrong_size() {
        let c = ModelConfig::micro();
        let p = init_params(&c, 3).unwrap();
        let batch = Tensor::full(&[2, 3, 32, 32], 0.5);
        let (f, l) = forward(&p, &batch).unwrap();
        assert_eq!(f.shape(), &[2, 32]);
        assert_eq!(l.shape(), &[2, 64]);
        let wrong = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(matches!(forward(&p, &wrong), Err(Error::Shape(_))));
    }
}
