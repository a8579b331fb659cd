//! Ready-made gradient checks: every graph op on random shapes, the full
//! encoder, and the distillation loss. Shared by the test suite and the
//! `gradcheck` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{self, CropConfig};
use crate::distill;
use crate::error::Result;
use crate::gradcheck::{gradcheck_inputs, GradcheckOptions, GradcheckReport};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::vit::{self, BoundParams, ModelConfig, ModelParams, LAYERNORM_EPS};

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    f: OpFn,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive dims")
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("positive dims")
}

/// Contracts an op output with a fixed random table so that every output
/// element contributes with a distinct weight.
fn contract(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn case<F>(name: &'static str, inputs: Vec<Tensor>, out_shape: &[usize], rng: &mut ChaCha8Rng, op: F) -> OpCase
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
{
    let weights = uniform(rng, out_shape, -1.0, 1.0);
    OpCase {
        name,
        inputs,
        f: Box::new(move |g, v| {
            let out = op(g, v)?;
            contract(g, out, &weights)
        }),
    }
}

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = |rng: &mut ChaCha8Rng| rng.random_range(2..=5usize);
    let (m, k, n, b) = (dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let r = &mut rng;
    let mut cases = Vec::new();

    let (x, y) = (uniform(r, &[m, k], -1.5, 1.5), uniform(r, &[k, n], -1.5, 1.5));
    cases.push(case("matmul", vec![x, y], &[m, n], r, |g, v| g.matmul(v[0], v[1])));

    let (x, y) = (uniform(r, &[b, m, k], -1.5, 1.5), uniform(r, &[b, k, n], -1.5, 1.5));
    cases.push(case("bmm", vec![x, y], &[b, m, n], r, |g, v| g.bmm(v[0], v[1])));

    let (x, y) = (uniform(r, &[m, k], -1.5, 1.5), uniform(r, &[m, k], -1.5, 1.5));
    cases.push(case("add", vec![x, y], &[m, k], r, |g, v| g.add(v[0], v[1])));

    let (x, y) = (uniform(r, &[m, k], -1.5, 1.5), uniform(r, &[m, k], -1.5, 1.5));
    cases.push(case("mul", vec![x, y], &[m, k], r, |g, v| g.mul(v[0], v[1])));

    let (x, y) = (uniform(r, &[b, m, k], -1.5, 1.5), uniform(r, &[m, k], -1.5, 1.5));
    cases.push(case("add_trailing", vec![x, y], &[b, m, k], r, |g, v| {
        g.add_trailing(v[0], v[1])
    }));

    let s = r.random_range(-2.0..2.0);
    let x = uniform(r, &[m, k], -1.5, 1.5);
    cases.push(case("scale", vec![x], &[m, k], r, move |g, v| Ok(g.scale(v[0], s))));

    let x = uniform(r, &[m, k], -1.5, 1.5);
    cases.push(case("add_scalar", vec![x], &[m, k], r, move |g, v| Ok(g.add_scalar(v[0], s))));

    let x = uniform(r, &[m, k], -1.5, 1.5);
    cases.push(case("exp", vec![x], &[m, k], r, |g, v| Ok(g.exp(v[0]))));

    let x = uniform(r, &[m, k], 0.3, 2.0);
    cases.push(case("log", vec![x], &[m, k], r, |g, v| Ok(g.log(v[0]))));

    let x = away_from_zero(r, &[m, k]);
    cases.push(case("clamp_min", vec![x], &[m, k], r, |g, v| Ok(g.clamp_min(v[0], 0.0))));

    let x = uniform(r, &[m, k], -3.0, 3.0);
    cases.push(case("gelu", vec![x], &[m, k], r, |g, v| Ok(g.gelu(v[0]))));

    let x = uniform(r, &[m, k, n], -1.5, 1.5);
    cases.push(case("reshape", vec![x], &[k, m * n], r, move |g, v| g.reshape(v[0], &[k, m * n])));

    let x = uniform(r, &[m, k, n], -1.5, 1.5);
    cases.push(case("permute", vec![x], &[n, m, k], r, |g, v| g.permute(v[0], &[2, 0, 1])));

    let x = uniform(r, &[b, m, k], -1.5, 1.5);
    cases.push(case("transpose", vec![x], &[b, k, m], r, |g, v| g.transpose(v[0])));

    let x = uniform(r, &[m, k + 2, n], -1.5, 1.5);
    cases.push(case("narrow", vec![x], &[m, k, n], r, move |g, v| g.narrow(v[0], 1, 1, k)));

    let (x, y) = (uniform(r, &[m, k], -1.5, 1.5), uniform(r, &[m, n], -1.5, 1.5));
    cases.push(case("concat", vec![x, y], &[m, k + n], r, |g, v| g.concat(&[v[0], v[1]], 1)));

    let x = uniform(r, &[1, m, k], -1.5, 1.5);
    cases.push(case("repeat0", vec![x], &[b, m, k], r, move |g, v| g.repeat0(v[0], b)));

    let x = uniform(r, &[m, k], -1.5, 1.5);
    cases.push(case("sum", vec![x], &[1], r, |g, v| Ok(g.sum(v[0]))));

    let x = uniform(r, &[m, k], -1.5, 1.5);
    cases.push(case("mean", vec![x], &[1], r, |g, v| Ok(g.mean(v[0]))));

    let x = uniform(r, &[m, k, n], -1.5, 1.5);
    cases.push(case("sum_last", vec![x], &[m, k], r, |g, v| Ok(g.sum_last(v[0]))));

    let x = uniform(r, &[m, k], -3.0, 3.0);
    cases.push(case("softmax", vec![x], &[m, k], r, |g, v| g.softmax_rows(v[0])));

    let (x, gamma, beta) = (
        uniform(r, &[m, k], -2.0, 2.0),
        uniform(r, &[k], 0.5, 1.5),
        uniform(r, &[k], -0.5, 0.5),
    );
    cases.push(case("layernorm", vec![x, gamma, beta], &[m, k], r, |g, v| {
        g.layernorm(v[0], v[1], v[2], LAYERNORM_EPS)
    }));

    let (x, w, bias) = (
        uniform(r, &[b, m, k], -1.5, 1.5),
        uniform(r, &[k, n], -1.0, 1.0),
        uniform(r, &[n], -0.5, 0.5),
    );
    cases.push(case("linear", vec![x, w, bias], &[b, m, n], r, |g, v| g.linear(v[0], v[1], v[2])));

    cases
}

/// One report per differentiable op, on shapes and values drawn from `seed`.
pub fn op_checks(seed: u64) -> Vec<GradcheckReport> {
    let opts = GradcheckOptions::default();
    op_cases(seed)
        .into_iter()
        .map(|c| gradcheck_inputs(c.name, &c.f, &c.inputs, &opts))
        .collect()
}

/// Negative control: GELU with its derivative scaled by 1.1. Must fail.
pub fn faulty_gelu_check(seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[3, 4], -3.0, 3.0);
    let weights = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    gradcheck_inputs(
        "gelu(injected fault)",
        |g, v| {
            let y = g.map_elementwise(v[0], crate::tensor::gelu, |t| 1.1 * crate::tensor::gelu_grad(t));
            contract(g, y, &weights)
        },
        &[x],
        &GradcheckOptions::default(),
    )
}

/// Initialization scaled up so that every path carries a non-negligible gradient.
fn spread_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = vit::init_params(config, seed).expect("valid preset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    params
}

fn param_list(params: &ModelParams) -> (Vec<String>, Vec<Tensor>) {
    params.iter().map(|(n, t)| (n.clone(), t.clone())).unzip()
}

/// `sum(logits)` of the smallest encoder preset against every parameter.
pub fn model_logit_check(tol: f64) -> GradcheckReport {
    let config = ModelConfig::nano();
    let params = spread_params(&config, 7);
    let (names, tensors) = param_list(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = config.image_size;
    let images = uniform(&mut rng, &[2, config.channels, s, s], -1.0, 1.0);
    let patches = vit::patchify_batch(&images, &config).expect("batch matches config");
    let opts = GradcheckOptions {
        tol,
        ..GradcheckOptions::default()
    };
    gradcheck_inputs(
        "encoder logit sum",
        |g, v| {
            let bound = BoundParams::from_vars(names.iter().cloned(), v);
            let x = g.constant(patches.clone());
            let out = vit::forward_graph(g, &config, &bound, x)?;
            Ok(g.sum(out.logits))
        },
        &tensors,
        &opts,
    )
}

fn distill_check(
    name: &str,
    config: &ModelConfig,
    teacher: &ModelParams,
    student: &ModelParams,
    source_size: usize,
    opts: &GradcheckOptions,
) -> GradcheckReport {
    let crops = CropConfig {
        n_global: 2,
        n_local: 3,
        out_size: config.image_size,
        seed: 5,
        ..CropConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let sources: Vec<Tensor> = (0..2)
        .map(|_| uniform(&mut rng, &[3, source_size, source_size], 0.0, 1.0))
        .collect();
    let batch: Vec<(u64, &Tensor)> = sources.iter().enumerate().map(|(i, t)| (i as u64, t)).collect();
    let dc = distill::DistillConfig::default();
    let prepared = augment::build_batch_seq(&batch, &crops, 0)
        .and_then(|sets| Ok((distill::teacher_targets(teacher, None, &sets, dc.tau_teacher)?, sets)));
    let (targets, crop_sets) = match prepared {
        Ok(p) => p,
        Err(e) => return GradcheckReport::failed_with(name, opts.tol, e.to_string()),
    };
    let (names, tensors) = param_list(student);
    gradcheck_inputs(
        name,
        |g, v| {
            let bound = BoundParams::from_vars(names.iter().cloned(), v);
            distill::student_loss(g, &bound, config, &crop_sets, &targets.probs, dc.tau_student)
        },
        &tensors,
        opts,
    )
}

/// Full multi-crop distillation loss of a two-image batch against every
/// student parameter of the smallest preset, with the teacher's targets held fixed.
pub fn distill_loss_check(tol: f64) -> GradcheckReport {
    let config = ModelConfig::nano();
    let opts = GradcheckOptions {
        tol,
        ..GradcheckOptions::default()
    };
    distill_check(
        "distillation loss (nano)",
        &config,
        &spread_params(&config, 21),
        &spread_params(&config, 22),
        16,
        &opts,
    )
}

/// The same loss on the default encoder preset, sampling a few elements of
/// every parameter tensor.
pub fn tiny_distill_loss_check(tol: f64) -> GradcheckReport {
    let config = ModelConfig::tiny();
    let teacher = vit::init_params(&config, 31).expect("valid preset");
    let student = vit::init_params(&config, 32).expect("valid preset");
    let opts = GradcheckOptions {
        tol,
        max_elements: Some(3),
        ..GradcheckOptions::default()
    };
    distill_check("distillation loss (tiny)", &config, &teacher, &student, 80, &opts)
}
