//! AdamW: adaptive moments with decoupled weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWSettings {
    fn default() -> Self {
        AdamWSettings {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "optimizer needs lr > 0, eps > 0, weight_decay >= 0 (got {self:?})"
            )));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("beta {b} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct AdamW {
    pub settings: AdamWSettings,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(settings: AdamWSettings) -> Self {
        AdamW {
            settings,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers for `name`, if it has been stepped.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One update over every named tensor, using each tensor's `grad`.
    /// Fails without touching anything if a gradient is missing.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a String, &'a mut Tensor)>,
    {
        let params: Vec<(&String, &mut Tensor)> = params.into_iter().collect();
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::Contract(format!("no gradient for parameter {name}")));
        }
        self.step += 1;
        let s = &self.settings;
        let t = self.step as i32;
        let bc1 = 1.0 - s.beta1.powi(t);
        let bc2 = 1.0 - s.beta2.powi(t);
        for (name, tensor) in params {
            let n = tensor.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = tensor.grad().expect("checked above").to_vec();
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
                v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= s.lr * (m_hat / (v_hat.sqrt() + s.eps) + s.weight_decay * *p);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut opt = AdamW::new(AdamWSettings {
            weight_decay: 0.0,
            ..AdamWSettings::default()
        });
        let name = "w".to_string();
        let mut t = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        t.accumulate_grad(&[0.0; 3]).unwrap();
        let before = t.clone();
        opt.step([(&name, &mut t)]).unwrap();
        assert!(t.bits_eq(&before));
    }

    #[test]
    fn single_scalar_step_matches_formula() {
        let s = AdamWSettings {
            lr: 0.1,
            beta1: 0.8,
            beta2: 0.9,
            eps: 1e-8,
            weight_decay: 0.05,
        };
        let mut opt = AdamW::new(s);
        let name = "w".to_string();
        let mut t = Tensor::scalar(1.5);
        t.accumulate_grad(&[0.4]).unwrap();
        opt.step([(&name, &mut t)]).unwrap();
        // m = 0.2*0.4 = 0.08, m_hat = 0.4; v = 0.1*0.16 = 0.016, v_hat = 0.16
        // p = 1.5 - 0.1*(0.4/(0.4+1e-8) + 0.05*1.5)
        let expected = 1.5 - 0.1 * (0.4 / (0.4 + 1e-8) + 0.075);
        assert!((t.data()[0] - expected).abs() < 1e-15);
        assert!((t.data()[0] - 1.3925).abs() < 1e-8);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut opt = AdamW::new(AdamWSettings::default());
        let (a, b) = ("a".to_string(), "b".to_string());
        let mut ta = Tensor::scalar(1.0);
        ta.accumulate_grad(&[1.0]).unwrap();
        let mut tb = Tensor::scalar(1.0);
        let err = opt.step([(&a, &mut ta), (&b, &mut tb)]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(ta.data()[0], 1.0);
        assert_eq!(opt.steps_taken(), 0);
    }
}
