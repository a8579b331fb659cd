//! Finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Below this analytic magnitude the absolute error is reported instead of the relative one.
pub const ABS_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub name: String,
    /// Largest per-element error (relative, or absolute for tiny gradients).
    pub max_error: f64,
    /// `(input index, element index)` where `max_error` occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
    /// Set when the function itself failed to evaluate.
    pub failure: Option<String>,
}

impl GradcheckReport {
    /// Report for a function that could not be evaluated.
    pub fn failed_with(name: &str, tol: f64, why: String) -> Self {
        GradcheckReport {
            name: name.to_string(),
            max_error: f64::INFINITY,
            worst: None,
            checked: 0,
            tol,
            passed: false,
            failure: Some(why),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Check at most this many evenly strided elements per input (all when `None`).
    pub max_elements: Option<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tol: 1e-4,
            max_elements: None,
        }
    }
}

/// Error between an analytic and a numeric derivative.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs() < ABS_ERROR_FLOOR {
        diff
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Checks a single-input scalar function.
pub fn gradcheck<F>(name: &str, f: F, x: &Tensor, step: f64, tol: f64) -> GradcheckReport
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let opts = GradcheckOptions {
        step,
        tol,
        max_elements: None,
    };
    gradcheck_inputs(name, |g, vs| f(g, vs[0]), std::slice::from_ref(x), &opts)
}

/// Compares `backward` against central differences for every input of `f`.
/// `f` must return a scalar.
pub fn gradcheck_inputs<F>(name: &str, f: F, inputs: &[Tensor], opts: &GradcheckOptions) -> GradcheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let analytic = match analytic_grads(&f, inputs) {
        Ok(a) => a,
        Err(e) => return GradcheckReport::failed_with(name, opts.tol, e.to_string()),
    };
    let mut report = GradcheckReport {
        name: name.to_string(),
        max_error: 0.0,
        worst: None,
        checked: 0,
        tol: opts.tol,
        passed: true,
        failure: None,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let stride = match opts.max_elements {
            Some(m) if m > 0 && m < n => n.div_ceil(m),
            _ => 1,
        };
        for e in (0..n).step_by(stride) {
            let orig = probe[which].data()[e];
            probe[which].data_mut()[e] = orig + opts.step;
            let plus = evaluate(&f, &probe);
            probe[which].data_mut()[e] = orig - opts.step;
            let minus = evaluate(&f, &probe);
            probe[which].data_mut()[e] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(err), _) | (_, Err(err)) => {
                    return GradcheckReport::failed_with(name, opts.tol, err.to_string())
                }
            };
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = gradient_error(grad[e], numeric);
            report.checked += 1;
            if !(err <= report.max_error) {
                report.max_error = err;
                report.worst = Some((which, e));
            }
        }
    }
    report.passed = report.max_error <= opts.tol;
    report
}

fn analytic_grads<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.clear_grad();
            g.param(t)
        })
        .collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect())
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.data(out)[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_passes_tight() {
        let x = Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = gradcheck(
            "sumsq",
            |g, x| {
                let sq = g.mul(x, x)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
            1e-6,
        );
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn wrong_derivative_fails() {
        let x = Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let r = gradcheck(
            "bad_sin",
            |g, x| {
                let y = g.map_elementwise(x, f64::sin, |v| 1.1 * v.cos());
                Ok(g.sum(y))
            },
            &x,
            1e-5,
            1e-4,
        );
        assert!(!r.passed);
        assert!(r.max_error >= 1e-4);
    }

    #[test]
    fn evaluation_failure_is_reported() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let r = gradcheck("non_scalar", |_, x| Ok(x), &x, 1e-5, 1e-4);
        assert!(!r.passed && r.failure.is_some());
    }
}
