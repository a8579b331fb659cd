//! Linear probe on frozen teacher features.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::{AdamW, AdamWSettings};
use crate::par;
use crate::tensor::Tensor;
use crate::vit::{self, ModelParams};

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];
pub const PARTITIONS: [&str; 3] = ["train", "val", "test"];
/// Images per forward pass during feature extraction.
pub const FEATURE_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    /// Sorted dataset indices per partition.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitAssignment {
    pub fn partition(&self, which: usize) -> &[usize] {
        match which {
            0 => &self.train,
            1 => &self.val,
            _ => &self.test,
        }
    }

    /// Partition index (0 train, 1 val, 2 test) of every dataset item.
    pub fn assignment(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for p in 0..3 {
            for &i in self.partition(p) {
                if i < n {
                    out[i] = Some(p);
                }
            }
        }
        out
    }
}

pub fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    Ok(())
}

/// Per-partition counts for `n` items: floors of the exact shares, then the
/// leftover items go to the largest fractional parts (earlier partition on ties).
pub fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    // Stable sort keeps train < val < test among equal remainders.
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra)
    });
    for &p in order.iter().take(n.saturating_sub(assigned)) {
        counts[p] += 1;
    }
    counts
}

/// Stratified train/validation/test split: each class is shuffled with a
/// seed-derived stream and cut by [`apportion`].
pub fn stratified_split(labels: &[usize], num_classes: usize, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    validate_ratios(ratios)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {num_classes})")));
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 3 {
            return Err(Error::Input(format!(
                "class {class} has {} items, a split needs at least 3",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(augment::crop_seed(seed, u64::MAX - 1, class as u64, 0));
        members.shuffle(&mut rng);
        let counts = apportion(members.len(), ratios);
        let mut rest = members.as_slice();
        for (p, &c) in counts.iter().enumerate() {
            let (take, tail) = rest.split_at(c);
            parts[p].extend_from_slice(take);
            rest = tail;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(SplitAssignment {
        train,
        val,
        test,
        ratios,
        seed,
    })
}

/// CLS features `[N × D]` of the eval-transformed `images`.
pub fn extract_features(teacher: &ModelParams, images: &[Tensor]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Input("no images to embed".into()));
    }
    let cfg = teacher.config();
    let chunks: Vec<&[Tensor]> = images.chunks(FEATURE_CHUNK).collect();
    let parts = par::map_range(chunks.len(), |c| -> Result<Vec<f64>> {
        let batch: Vec<Tensor> = chunks[c]
            .iter()
            .map(|img| {
                if img.rank() != 3 || img.shape()[0] != cfg.channels {
                    return Err(Error::shape(format!(
                        "image {:?} does not have {} channels",
                        img.shape(),
                        cfg.channels
                    )));
                }
                augment::eval_transform(img, cfg.image_size)
            })
            .collect::<Result<_>>()?;
        let (features, _) = vit::forward(teacher, &vit::stack(&batch)?)?;
        Ok(features.into_data())
    });
    let mut data = Vec::with_capacity(images.len() * cfg.embed_dim);
    for p in parts {
        data.extend(p?);
    }
    Tensor::new(&[images.len(), cfg.embed_dim], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSettings {
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Seeds the head initialization.
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            lr: 1e-2,
            epochs: 200,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// Single linear layer `features · weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    /// `[D × C]`
    pub weight: Tensor,
    /// `[C]`
    pub bias: Tensor,
}

impl LinearHead {
    pub const WEIGHT: &'static str = "probe.weight";
    pub const BIAS: &'static str = "probe.bias";

    pub fn zeros(dim: usize, classes: usize) -> Self {
        LinearHead {
            weight: Tensor::zeros(&[dim, classes]),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.numel()
    }

    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let d = self.weight.shape()[0];
        if features.rank() != 2 || features.shape()[1] != d {
            return Err(Error::shape(format!(
                "features {:?} do not match head input width {d}",
                features.shape()
            )));
        }
        let mut out = features.matmul(&self.weight)?;
        let c = self.num_classes();
        for row in out.data_mut().chunks_exact_mut(c) {
            row.iter_mut().zip(self.bias.data()).for_each(|(v, b)| *v += b);
        }
        Ok(out.with_requires_grad(false))
    }

    pub fn bits_eq(&self, other: &LinearHead) -> bool {
        self.weight.bits_eq(&other.weight) && self.bias.bits_eq(&other.bias)
    }
}

/// Softmax probabilities `[N × C]` and argmax labels (lowest index on ties).
pub fn predict(head: &LinearHead, features: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let logits = head.logits(features)?;
    let c = head.num_classes();
    let labels = logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok((logits.softmax_rows()?, labels))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

fn rows(features: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let d = features.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&features.data()[i * d..(i + 1) * d]);
    }
    Tensor::new(&[idx.len(), d], data)
}

/// Per-column mean and inverse standard deviation of `x`. Constant columns get
/// an inverse of 1, so they standardize to zero.
fn column_scaling(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for row in x.data().chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut var = vec![0.0; d];
    for row in x.data().chunks_exact(d) {
        var.iter_mut().zip(row.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n as f64);
    }
    let inv = var.iter().map(|&v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    (mean, inv)
}

fn standardize_rows(x: &Tensor, mean: &[f64], inv: &[f64]) -> Result<Tensor> {
    let d = mean.len();
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(d) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(inv) {
            *v = (*v - m) * s;
        }
    }
    Tensor::new(x.shape(), data)
}

/// Full-batch softmax cross-entropy training on the train partition. Features
/// are standardized with train-partition statistics during training and the
/// scaling is folded into the returned head, which therefore applies to raw
/// features. Returns the head from the epoch with the best validation
/// accuracy (latest, so most trained, on ties) and the per-epoch trace. Test
/// items are never read.
pub fn train_head(
    features: &Tensor,
    labels: &[usize],
    num_classes: usize,
    split: &SplitAssignment,
    settings: &ProbeSettings,
) -> Result<(LinearHead, Vec<ProbeEpoch>)> {
    let (n, d) = match features.shape() {
        [n, d] => (*n, *d),
        s => return Err(Error::shape(format!("features must be [N, D], got {s:?}"))),
    };
    if labels.len() != n {
        return Err(Error::shape(format!("{n} feature rows for {} labels", labels.len())));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Input("train and validation partitions must be non-empty".into()));
    }
    let used = split.train.iter().chain(&split.val);
    if let Some(&i) = used.clone().find(|&&i| i >= n) {
        return Err(Error::Input(format!("split index {i} outside dataset of {n}")));
    }
    if let Some(&i) = used.clone().find(|&&i| labels[i] >= num_classes) {
        return Err(Error::Input(format!(
            "label {} of item {i} outside [0, {num_classes})",
            labels[i]
        )));
    }
    let raw_train = rows(features, &split.train)?;
    let (mean, inv) = column_scaling(&raw_train);
    let x_train = standardize_rows(&raw_train, &mean, &inv)?;
    let x_val = rows(features, &split.val)?;
    let y_val: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();
    let nt = split.train.len();
    let mut onehot = vec![0.0; nt * num_classes];
    for (r, &i) in split.train.iter().enumerate() {
        onehot[r * num_classes + labels[i]] = 1.0;
    }
    let onehot = Tensor::new(&[nt, num_classes], onehot)?;

    let mut params = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let init = (0..d * num_classes).map(|_| vit::trunc_normal(&mut rng, 0.01)).collect();
    params.insert(LinearHead::WEIGHT.to_string(), Tensor::new(&[d, num_classes], init)?);
    params.insert(LinearHead::BIAS.to_string(), Tensor::zeros(&[num_classes]));
    let mut opt = AdamW::new(AdamWSettings {
        lr: settings.lr,
        weight_decay: settings.weight_decay,
        ..AdamWSettings::default()
    });
    let head_of = |p: &BTreeMap<String, Tensor>| -> Result<LinearHead> {
        let w = p[LinearHead::WEIGHT].data();
        let mut weight = vec![0.0; d * num_classes];
        let mut bias = p[LinearHead::BIAS].data().to_vec();
        for j in 0..d {
            for c in 0..num_classes {
                let folded = w[j * num_classes + c] * inv[j];
                weight[j * num_classes + c] = folded;
                bias[c] -= folded * mean[j];
            }
        }
        Ok(LinearHead {
            weight: Tensor::new(&[d, num_classes], weight)?,
            bias: Tensor::new(&[num_classes], bias)?,
        })
    };

    let mut best: Option<(f64, LinearHead)> = None;
    let mut trace = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        let mut g = Graph::new();
        let w = g.param(params[LinearHead::WEIGHT].clone());
        let b = g.param(params[LinearHead::BIAS].clone());
        let x = g.constant(x_train.clone());
        let logits = g.linear(x, w, b)?;
        let probs = g.softmax_rows(logits)?;
        let clamped = g.clamp_min(probs, crate::distill::LOG_CLAMP);
        let logp = g.log(clamped);
        let y = g.constant(onehot.clone());
        let picked = g.mul(y, logp)?;
        let total = g.sum(picked);
        let loss = g.scale(total, -1.0 / nt as f64);
        let train_loss = g.data(loss)[0];
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("probe loss {train_loss} at epoch {epoch}")));
        }
        g.backward(loss)?;
        for (name, var) in [(LinearHead::WEIGHT, w), (LinearHead::BIAS, b)] {
            let t = params.get_mut(name).expect("inserted above");
            t.clear_grad();
            t.accumulate_grad(g.grad(var).expect("tracked leaf"))?;
        }
        opt.step(params.iter_mut())?;

        let head = head_of(&params)?;
        let (_, pred) = predict(&head, &x_val)?;
        let val_accuracy = crate::metrics::accuracy(&pred, &y_val)?;
        trace.push(ProbeEpoch {
            epoch,
            train_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy >= *acc) {
            best = Some((val_accuracy, head));
        }
    }
    let head = match best {
        Some((_, h)) => h,
        None => head_of(&params)?,
    };
    Ok((head, trace))
}
