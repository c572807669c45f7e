use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("adam parameters", self.m.len(), params.len()));
        }
        if grads.len() != self.m.len() {
            return Err(Error::shape("adam gradients", self.m.len(), grads.len()));
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 3.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(cfg, 3);
        let g = [0.5, -3.0, 1e-3];
        let mut p = vec![0.0; 3];
        s.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let expected = -cfg.learning_rate * gi / (gi.abs() + cfg.epsilon);
            assert!((pi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_descend_a_quadratic() {
        let loss = |x: f64| (x - 3.0) * (x - 3.0);
        let mut s = AdamState::new(AdamConfig { learning_rate: 0.1, ..AdamConfig::default() }, 1);
        let mut x = [0.0];
        let l0 = loss(x[0]);
        let g = [2.0 * (x[0] - 3.0)];
        s.step(&mut x, &g).unwrap();
        let l1 = loss(x[0]);
        let g = [2.0 * (x[0] - 3.0)];
        s.step(&mut x, &g).unwrap();
        let l2 = loss(x[0]);
        assert!(l1 < l0 && l2 < l1);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(AdamConfig::default(), 2);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
