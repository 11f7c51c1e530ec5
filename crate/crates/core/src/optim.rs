//! Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("optimizer.lr = {} must be positive", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("optimizer.{name} = {b} must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            problems.push(format!("optimizer.eps = {} must be positive", self.eps));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// First and second moments for every tensor of one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn bit_eq(&self, other: &AdamState) -> bool {
        self.step == other.step
            && self.m.iter().zip(&other.m).all(|(a, b)| a.bit_eq(b))
            && self.v.iter().zip(&other.v).all(|(a, b)| a.bit_eq(b))
    }

    /// One bias-corrected Adam update. `grads` align with `params.values()`.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = ParamStore::new();
        params.add("x", Tensor::from_vec(vec![1.0, -1.0, 0.0]));
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::default();
        state.update(&cfg, &mut params, &[Tensor::from_vec(vec![0.5, -4.0, 0.0])]);
        let x = params.values()[0].data();
        assert!((x[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((x[1] - (-1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = ParamStore::new();
        params.add("x", Tensor::from_vec(vec![3.0]));
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        for _ in 0..2000 {
            let g = params.values()[0].map(|x| 2.0 * (x - 1.0));
            state.update(&cfg, &mut params, &[g]);
        }
        assert!((params.values()[0].item() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn validate_rejects_bad_values() {
        let bad = AdamConfig { lr: 0.0, beta1: 1.0, ..AdamConfig::default() };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("lr") && msg.contains("beta1"));
    }
}
