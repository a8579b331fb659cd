//! Finite-difference checks for every differentiable graph op and for the
//! full encoder and distillation loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssvt_core::gradcheck::{gradcheck_inputs, GradcheckOptions};
use ssvt_core::suite::{distill_loss_check, model_logit_check, op_checks};
use ssvt_core::{Graph, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

#[test]
fn every_op_matches_finite_differences_on_20_seeds() {
    for seed in 0..20 {
        for report in op_checks(seed) {
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }
}

#[test]
fn random_three_op_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let r = gradcheck_inputs(
        "matmul-gelu-sum",
        |g: &mut Graph, v| {
            let m = g.matmul(v[0], v[1])?;
            let h = g.gelu(m);
            let e = g.exp(h);
            Ok(g.sum(e))
        },
        &[a, b],
        &GradcheckOptions::default(),
    );
    assert!(r.passed, "{r:?}");
}

#[test]
fn input_used_twice_sums_both_paths() {
    let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
    let mut g = Graph::new();
    let v = g.param(x);
    let a = g.scale(v, 3.0);
    let b = g.mul(v, v).unwrap();
    let s = g.add(a, b).unwrap();
    let loss = g.sum(s);
    g.backward(loss).unwrap();
    // d/dx (3x + x^2) = 3 + 2x
    assert_eq!(g.grad(v).unwrap(), &[4.0, 1.0, 7.0]);
}

#[test]
fn full_model_logit_sum() {
    let r = model_logit_check(1e-4);
    assert!(r.passed, "{r:?}");
}

#[test]
fn full_distillation_loss() {
    let r = distill_loss_check(1e-4);
    assert!(r.passed, "{r:?}");
}
