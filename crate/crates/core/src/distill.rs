//! Stage-1 self-distillation.
//!
//! The student sees local crops and is trained by backpropagation to match
//! the temperature-sharpened output of the teacher on global crops. The
//! teacher never receives gradients; it follows the student through an
//! exponential moving average of the weights.
//!
//! Per image the loss is the mean over all `(global, local)` pairs of
//! `H(P_t(global), P_s(local))` with `H(a, b) = -Σ a log b`; a batch loss is
//! the mean over its images.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{self, CropConfig, CropSet};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::optim::{AdamW, AdamWSettings};
use crate::tensor::Tensor;
use crate::vit::{self, BoundParams, ModelConfig, ModelParams};

/// Floor applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmaGranularity {
    PerEpoch,
    PerStep,
}

impl EmaGranularity {
    pub fn as_str(self) -> &'static str {
        match self {
            EmaGranularity::PerEpoch => "epoch",
            EmaGranularity::PerStep => "step",
        }
    }
}

/// Value of the center before the first update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CenterInit {
    Zero,
    /// Mean teacher logits of the first training batch.
    FirstBatch,
}

impl CenterInit {
    pub fn as_str(self) -> &'static str {
        match self {
            CenterInit::Zero => "zero",
            CenterInit::FirstBatch => "first_batch",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub tau_teacher: f64,
    pub tau_student: f64,
    /// Must equal the model's `proj_dim`.
    pub proj_dim: usize,
    pub lambda_ema: f64,
    pub ema_granularity: EmaGranularity,
    pub centering: bool,
    pub center_momentum: f64,
    pub center_init: CenterInit,
    pub optimizer: AdamWSettings,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds student initialization and per-epoch shuffling.
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau_teacher: 0.04,
            tau_student: 0.1,
            proj_dim: ModelConfig::tiny().proj_dim,
            lambda_ema: 0.9,
            ema_granularity: EmaGranularity::PerEpoch,
            centering: false,
            center_momentum: 0.9,
            center_init: CenterInit::Zero,
            optimizer: AdamWSettings::default(),
            epochs: 10,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau_teacher > 0.0) || !(self.tau_student > 0.0) {
            return bad(format!(
                "temperatures must be positive (tau_teacher {}, tau_student {})",
                self.tau_teacher, self.tau_student
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_ema) {
            return bad(format!("lambda_ema {} outside [0, 1]", self.lambda_ema));
        }
        if !(0.0..1.0).contains(&self.center_momentum) {
            return bad(format!("center_momentum {} outside [0, 1)", self.center_momentum));
        }
        if self.batch_size == 0 || self.proj_dim == 0 {
            return bad("batch_size and proj_dim must be positive".into());
        }
        self.optimizer.validate()
    }
}

/// Row-wise softmax of `logits / tau`.
pub fn sharpen(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let scaled = Tensor::new(logits.shape(), logits.data().iter().map(|v| v / tau).collect())?;
    scaled.softmax_rows()
}

/// Mean over rows of `-Σ_i target_i · ln(max(pred_i, 1e-12))`.
pub fn cross_entropy(target: &Tensor, pred: &Tensor) -> Result<f64> {
    if target.shape() != pred.shape() {
        return Err(Error::shape(format!(
            "cross_entropy: target {:?} vs prediction {:?}",
            target.shape(),
            pred.shape()
        )));
    }
    let k = *target.shape().last().expect("rank >= 1");
    let rows = target.numel() / k;
    let total: f64 = target
        .data()
        .iter()
        .zip(pred.data())
        .map(|(a, b)| if *a == 0.0 { 0.0 } else { -a * b.max(LOG_CLAMP).ln() })
        .sum();
    Ok(total / rows as f64)
}

/// Shannon entropy (nats) of each row, averaged.
pub fn mean_entropy(probs: &Tensor) -> f64 {
    let k = *probs.shape().last().expect("rank >= 1");
    let rows = probs.numel() / k;
    let total: f64 = probs
        .data()
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    total / rows as f64
}

/// Pair-averaged loss from already-sharpened probabilities of one image:
/// `teacher` is `[n_g × K]`, `student` is `[n_l × K]`.
pub fn pair_loss_from_probs(teacher: &Tensor, student: &Tensor) -> Result<f64> {
    let (ng, k) = match teacher.shape() {
        [n, k] => (*n, *k),
        s => return Err(Error::shape(format!("teacher probs must be [n_g, K], got {s:?}"))),
    };
    let nl = match student.shape() {
        [n, k2] if *k2 == k => *n,
        s => return Err(Error::shape(format!("student probs must be [n_l, {k}], got {s:?}"))),
    };
    let mut total = 0.0;
    for g in 0..ng {
        for l in 0..nl {
            let t = &teacher.data()[g * k..(g + 1) * k];
            let s = &student.data()[l * k..(l + 1) * k];
            total += t
                .iter()
                .zip(s)
                .map(|(a, b)| if *a == 0.0 { 0.0 } else { -a * b.max(LOG_CLAMP).ln() })
                .sum::<f64>();
        }
    }
    Ok(total / (ng * nl) as f64)
}

/// Records `cross_entropy(target, softmax(logits / tau))` in `g`, where the
/// target is a constant `[rows × K]` weight table. Returns the summed (not
/// averaged) loss.
fn weighted_log_softmax_loss(g: &mut Graph, logits: Var, weights: Tensor, tau: f64) -> Result<Var> {
    let scaled = g.scale(logits, 1.0 / tau);
    let probs = g.softmax_rows(scaled)?;
    let clamped = g.clamp_min(probs, LOG_CLAMP);
    let logp = g.log(clamped);
    let w = g.constant(weights);
    let prod = g.mul(w, logp)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean entropy of the teacher's sharpened (and centered) outputs.
    pub teacher_entropy: f64,
}

#[derive(Clone, Debug)]
pub struct DistillState {
    pub teacher: ModelParams,
    pub student: ModelParams,
    pub optimizer: AdamW,
    /// `[K]` running mean of teacher logits (used only with centering).
    pub center: Tensor,
    /// Number of center updates so far.
    pub center_updates: u64,
    pub epoch: usize,
    pub loss_history: Vec<EpochRecord>,
}

impl DistillState {
    /// Fresh student from `seed`; the teacher starts as an exact copy.
    pub fn new(model: &ModelConfig, config: &DistillConfig) -> Result<Self> {
        let student = vit::init_params(model, config.seed)?;
        Ok(Self::from_student(student, config))
    }

    pub fn from_student(student: ModelParams, config: &DistillConfig) -> Self {
        let teacher = vit::clone_params(&student);
        let k = student.config().proj_dim;
        DistillState {
            teacher,
            student,
            optimizer: AdamW::new(config.optimizer.clone()),
            center: Tensor::zeros(&[k]),
            center_updates: 0,
            epoch: 0,
            loss_history: Vec::new(),
        }
    }
}

/// Teacher side of a batch: sharpened targets and raw logits.
#[derive(Clone, Debug)]
pub struct TeacherTargets {
    /// `[B·n_g × K]` logits before centering.
    pub logits: Tensor,
    /// `[B·n_g × K]` sharpened probabilities.
    pub probs: Tensor,
}

fn check_batch(crop_sets: &[CropSet]) -> Result<(usize, usize)> {
    if crop_sets.is_empty() || crop_sets.iter().any(|c| c.globals.is_empty() || c.locals.is_empty()) {
        return Err(Error::Input("empty crop set".into()));
    }
    let ng = crop_sets[0].globals.len();
    let nl = crop_sets[0].locals.len();
    if crop_sets.iter().any(|c| c.globals.len() != ng || c.locals.len() != nl) {
        return Err(Error::Input("crop sets in a batch differ in size".into()));
    }
    Ok((ng, nl))
}

/// Gradient-free teacher pass over every global crop, centered by `center`
/// when given, then sharpened with `tau`.
pub fn teacher_targets(
    teacher: &ModelParams,
    center: Option<&Tensor>,
    crop_sets: &[CropSet],
    tau: f64,
) -> Result<TeacherTargets> {
    check_batch(crop_sets)?;
    let globals: Vec<Tensor> = crop_sets.iter().flat_map(|c| c.global_images().cloned()).collect();
    let (_, logits) = vit::forward(teacher, &vit::stack(&globals)?)?;
    let centered = match center {
        Some(center) => {
            let k = center.numel();
            let c = center.data();
            let data = logits
                .data()
                .chunks_exact(k)
                .flat_map(|row| row.iter().zip(c).map(|(a, b)| a - b))
                .collect();
            Tensor::new(logits.shape(), data)?
        }
        None => logits.clone(),
    };
    let probs = sharpen(&centered, tau)?;
    Ok(TeacherTargets { logits, probs })
}

/// Records the student side of the batch loss in `g`:
/// `mean_images mean_pairs H(teacher_probs(global), softmax(student(local) / tau))`.
pub fn student_loss(
    g: &mut Graph,
    student: &BoundParams,
    model: &ModelConfig,
    crop_sets: &[CropSet],
    teacher_probs: &Tensor,
    tau: f64,
) -> Result<Var> {
    let (ng, nl) = check_batch(crop_sets)?;
    let b = crop_sets.len();
    let k = model.proj_dim;
    if teacher_probs.shape() != [b * ng, k] {
        return Err(Error::shape(format!(
            "teacher probabilities {:?}, expected [{}, {k}]",
            teacher_probs.shape(),
            b * ng
        )));
    }
    // Σ_g P_t(g) per image, spread over that image's locals, so that
    // -Σ weights·log P_s is the pair mean averaged over images.
    let scale = 1.0 / (ng * nl * b) as f64;
    let mut weights = Vec::with_capacity(b * nl * k);
    for img in 0..b {
        let mut summed = vec![0.0; k];
        for gi in 0..ng {
            let row = &teacher_probs.data()[(img * ng + gi) * k..(img * ng + gi + 1) * k];
            summed.iter_mut().zip(row).for_each(|(s, p)| *s += p * scale);
        }
        for _ in 0..nl {
            weights.extend_from_slice(&summed);
        }
    }
    let locals: Vec<Tensor> = crop_sets.iter().flat_map(|c| c.local_images().cloned()).collect();
    let patches = vit::patchify_batch(&vit::stack(&locals)?, model)?;
    let x = g.constant(patches);
    let out = vit::forward_graph(g, model, student, x)?;
    weighted_log_softmax_loss(g, out.logits, Tensor::new(&[b * nl, k], weights)?, tau)
}

struct BatchLoss {
    graph: Graph,
    loss: Var,
    student: BoundParams,
    teacher: TeacherTargets,
}

/// Records the batch loss with the student's parameters as gradient-tracking leaves.
fn batch_loss(state: &DistillState, crop_sets: &[CropSet], config: &DistillConfig) -> Result<BatchLoss> {
    let model = state.student.config();
    if model.proj_dim != config.proj_dim {
        return Err(Error::Config(format!(
            "distill proj_dim {} differs from model proj_dim {}",
            config.proj_dim, model.proj_dim
        )));
    }
    let center = config.centering.then_some(&state.center);
    let teacher = teacher_targets(&state.teacher, center, crop_sets, config.tau_teacher)?;
    let mut graph = Graph::new();
    let student = BoundParams::bind(&mut graph, &state.student, true);
    let loss = student_loss(&mut graph, &student, model, crop_sets, &teacher.probs, config.tau_student)?;
    Ok(BatchLoss {
        graph,
        loss,
        student,
        teacher,
    })
}

/// Pair-averaged distillation loss for one image's crop set.
pub fn pair_loss(state: &DistillState, crop_set: &CropSet, config: &DistillConfig) -> Result<Tensor> {
    let bl = batch_loss(state, std::slice::from_ref(crop_set), config)?;
    Ok(bl.graph.value(bl.loss).clone().with_requires_grad(false))
}

/// Batch loss (mean over images of [`pair_loss`]).
pub fn batch_pair_loss(state: &DistillState, crop_sets: &[CropSet], config: &DistillConfig) -> Result<f64> {
    let bl = batch_loss(state, crop_sets, config)?;
    Ok(bl.graph.data(bl.loss)[0])
}

/// Backpropagates the batch loss into the student's grad buffers.
/// Returns the loss value and the teacher's uncentered logits.
pub fn accumulate_student_grads(
    state: &mut DistillState,
    crop_sets: &[CropSet],
    config: &DistillConfig,
) -> Result<(f64, Tensor, f64)> {
    let mut bl = batch_loss(state, crop_sets, config)?;
    let value = bl.graph.data(bl.loss)[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite distillation loss {value}")));
    }
    bl.graph.backward(bl.loss)?;
    bl.student.accumulate_into(&bl.graph, &mut state.student)?;
    let entropy = mean_entropy(&bl.teacher.probs);
    Ok((value, bl.teacher.logits, entropy))
}

/// `teacher ← λ·teacher + (1-λ)·student`, elementwise.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    if !teacher.same_structure(student) {
        return Err(Error::Consistency(
            "teacher and student parameter sets differ".into(),
        ));
    }
    if lambda == 1.0 {
        return Ok(());
    }
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        if lambda == 0.0 {
            t.data_mut().copy_from_slice(s.data());
        } else {
            for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
                *a = lambda * *a + (1.0 - lambda) * b;
            }
        }
    }
    Ok(())
}

/// Student AdamW step from the accumulated grads, which are then cleared.
pub fn optimizer_step(state: &mut DistillState) -> Result<()> {
    state.optimizer.step(state.student.iter_mut())?;
    state.student.clear_grads();
    Ok(())
}

/// `center ← m·center + (1-m)·mean_rows(teacher_logits)`.
pub fn update_center(center: &mut Tensor, teacher_logits: &Tensor, momentum: f64) -> Result<()> {
    let k = center.numel();
    if teacher_logits.shape().last() != Some(&k) {
        return Err(Error::shape(format!(
            "center of size {k} vs teacher logits {:?}",
            teacher_logits.shape()
        )));
    }
    let rows = teacher_logits.numel() / k;
    let mut mean = vec![0.0; k];
    for row in teacher_logits.data().chunks_exact(k) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    for (c, m) in center.data_mut().iter_mut().zip(&mean) {
        *c = momentum * *c + (1.0 - momentum) * (m / rows as f64);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub state: DistillState,
    pub trace: Vec<EpochRecord>,
}

fn check_dataset(dataset: &[Tensor], model: &ModelConfig, crops: &CropConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Input("empty pretraining dataset".into()));
    }
    for (i, img) in dataset.iter().enumerate() {
        match img.shape() {
            [c, h, w] if *c == model.channels => crops
                .check_source(*c, *h, *w)
                .map_err(|e| Error::Input(format!("image {i}: {e}")))?,
            s => {
                return Err(Error::Input(format!(
                    "image {i}: shape {s:?} does not have {} channels",
                    model.channels
                )))
            }
        }
    }
    Ok(())
}

/// Runs one epoch over `dataset` in a seed-determined order.
pub fn train_epoch(
    state: &mut DistillState,
    dataset: &[Tensor],
    crops: &CropConfig,
    config: &DistillConfig,
) -> Result<EpochRecord> {
    let epoch = state.epoch;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(augment::crop_seed(config.seed, epoch as u64, u64::MAX, 0));
    order.shuffle(&mut rng);

    let mut loss_sum = 0.0;
    let mut entropy_sum = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<(u64, &Tensor)> = chunk.iter().map(|&i| (i as u64, &dataset[i])).collect();
        let crop_sets = augment::build_batch(&batch, crops, epoch as u64)?;
        if config.centering && config.center_init == CenterInit::FirstBatch && state.center_updates == 0 {
            let first = teacher_targets(&state.teacher, None, &crop_sets, config.tau_teacher)?;
            update_center(&mut state.center, &first.logits, 0.0)?;
            state.center_updates += 1;
        }
        let (loss, teacher_logits, entropy) = accumulate_student_grads(state, &crop_sets, config)?;
        optimizer_step(state)?;
        if config.centering {
            update_center(&mut state.center, &teacher_logits, config.center_momentum)?;
            state.center_updates += 1;
        }
        if config.ema_granularity == EmaGranularity::PerStep {
            ema_update(&mut state.teacher, &state.student, config.lambda_ema)?;
        }
        loss_sum += loss * chunk.len() as f64;
        entropy_sum += entropy * chunk.len() as f64;
    }
    if config.ema_granularity == EmaGranularity::PerEpoch {
        ema_update(&mut state.teacher, &state.student, config.lambda_ema)?;
    }
    let n = dataset.len() as f64;
    let record = EpochRecord {
        epoch,
        mean_loss: loss_sum / n,
        teacher_entropy: entropy_sum / n,
    };
    state.epoch += 1;
    state.loss_history.push(record.clone());
    Ok(record)
}

/// Stage-1 pretraining from a fresh student. Fully determined by the configs.
pub fn pretrain(
    dataset: &[Tensor],
    model: &ModelConfig,
    crops: &CropConfig,
    config: &DistillConfig,
) -> Result<PretrainOutput> {
    pretrain_with(dataset, model, crops, config, |_| {})
}

/// [`pretrain`] with a callback after every epoch.
pub fn pretrain_with(
    dataset: &[Tensor],
    model: &ModelConfig,
    crops: &CropConfig,
    config: &DistillConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<PretrainOutput> {
    model.validate()?;
    crops.validate()?;
    config.validate()?;
    if config.proj_dim != model.proj_dim {
        return Err(Error::Config(format!(
            "distill.proj_dim {} differs from model.proj_dim {}",
            config.proj_dim, model.proj_dim
        )));
    }
    if crops.out_size != model.image_size {
        return Err(Error::Config(format!(
            "crop out_size {} differs from model image_size {}",
            crops.out_size, model.image_size
        )));
    }
    check_dataset(dataset, model, crops)?;
    let mut state = DistillState::new(model, config)?;
    for _ in 0..config.epochs {
        let rec = train_epoch(&mut state, dataset, crops, config)?;
        on_epoch(&rec);
    }
    let trace = state.loss_history.clone();
    Ok(PretrainOutput { state, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(&[1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn sharpen_examples() {
        let u = sharpen(&row(&[0.3; 5]), 0.07).unwrap();
        assert!(u.data().iter().all(|p| (p - 0.2).abs() < 1e-15));
        let p = sharpen(&row(&[1.0, 2.0]), 1.0).unwrap();
        assert!((p.data()[0] - 0.26894).abs() < 1e-5 && (p.data()[1] - 0.73106).abs() < 1e-5);
        assert!(matches!(sharpen(&row(&[1.0]), 0.0), Err(Error::Config(_))));
        assert!(sharpen(&row(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let one_hot = row(&[0.0, 1.0, 0.0]);
        assert_eq!(cross_entropy(&one_hot, &one_hot).unwrap(), 0.0);
        let u = row(&[0.25; 4]);
        assert!((cross_entropy(&u, &u).unwrap() - 4f64.ln()).abs() < 1e-12);
        let h = cross_entropy(&row(&[0.5, 0.5]), &row(&[0.9, 0.1])).unwrap();
        assert!((h - 1.20397).abs() < 1e-5);
        assert!(cross_entropy(&row(&[1.0]), &row(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn ema_examples() {
        let cfg = ModelConfig::nano();
        let mut teacher = vit::init_params(&cfg, 1).unwrap();
        let student = vit::init_params(&cfg, 2).unwrap();
        let orig = teacher.clone();
        ema_update(&mut teacher, &student, 1.0).unwrap();
        assert!(teacher.bits_eq(&orig));
        ema_update(&mut teacher, &student, 0.0).unwrap();
        assert!(teacher.bits_eq(&student));

        let mut t = orig.clone();
        let mut s = student.clone();
        t.get_mut("head.bias").unwrap().data_mut()[0] = 2.0;
        s.get_mut("head.bias").unwrap().data_mut()[0] = 4.0;
        ema_update(&mut t, &s, 0.5).unwrap();
        assert_eq!(t.get("head.bias").unwrap().data()[0], 3.0);

        let other = vit::init_params(&ModelConfig::micro(), 0).unwrap();
        assert!(matches!(ema_update(&mut t, &other, 0.5), Err(Error::Consistency(_))));
    }

    #[test]
    fn center_examples() {
        let logits = Tensor::new(&[2, 2], vec![1.0, 3.0, 3.0, 5.0]).unwrap();
        let mut c = Tensor::new(&[2], vec![10.0, 10.0]).unwrap();
        update_center(&mut c, &logits, 0.0).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);

        let mut c = Tensor::zeros(&[2]);
        let constant = Tensor::new(&[1, 2], vec![0.7, -1.2]).unwrap();
        for _ in 0..2000 {
            update_center(&mut c, &constant, 0.99).unwrap();
        }
        assert!((c.data()[0] - 0.7).abs() < 1e-6 && (c.data()[1] + 1.2).abs() < 1e-6);

        // two batches, m = 0.5: c1 = 0.5*0 + 0.5*2 = 1; c2 = 0.5*1 + 0.5*6 = 3.5
        let mut c = Tensor::zeros(&[1]);
        update_center(&mut c, &Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap(), 0.5).unwrap();
        update_center(&mut c, &Tensor::new(&[1, 1], vec![6.0]).unwrap(), 0.5).unwrap();
        assert_eq!(c.data(), &[3.5]);
    }

    #[test]
    fn pair_loss_identities() {
        let p = sharpen(&row(&[0.2, -0.4, 1.3, 0.0]), 0.5).unwrap();
        let h = pair_loss_from_probs(&p, &p).unwrap();
        assert!((h - mean_entropy(&p)).abs() < 1e-12);
        let one_hot = row(&[0.0, 0.0, 1.0]);
        assert!(pair_loss_from_probs(&one_hot, &one_hot).unwrap() <= 1e-10);
    }

    #[test]
    fn config_validation() {
        let mut c = DistillConfig::default();
        assert!(c.validate().is_ok());
        c.tau_teacher = 0.0;
        assert!(c.validate().is_err());
        let c = DistillConfig {
            lambda_ema: 1.5,
            ..DistillConfig::default()
        };
        assert!(c.validate().is_err());
        let c = DistillConfig {
            center_momentum: 1.0,
            ..DistillConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
