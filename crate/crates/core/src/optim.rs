//! Bias-corrected Adam over flat parameter groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam moments for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update; decoupled weight decay when configured.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::usage(format!(
                "adam group has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * (mh / (vh.sqrt() + eps) + weight_decay * params[i]);
        }
        Ok(())
    }

    /// Keep rows whose mask entry is true; `stride` scalars per row.
    pub fn retain_rows(&mut self, keep: &[bool], stride: usize) {
        let filter = |src: &[f64]| -> Vec<f64> {
            keep.iter()
                .enumerate()
                .filter(|(_, &k)| k)
                .flat_map(|(i, _)| src[i * stride..(i + 1) * stride].iter().copied())
                .collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }

    /// Append zero moments for `rows` new rows.
    pub fn push_zero_rows(&mut self, rows: usize, stride: usize) {
        self.m.resize(self.m.len() + rows * stride, 0.0);
        self.v.resize(self.v.len() + rows * stride, 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = Adam::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.0];
        a.step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_closed_form() {
        for g in [1e-3, 0.5, 40.0, -7.0] {
            let mut a = Adam::new(1, AdamConfig::default());
            let mut p = vec![0.0];
            a.step(&mut p, &[g], 0.01).unwrap();
            // m_hat = g, v_hat = g^2
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn parameters_update_independently() {
        let mut a = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        a.step(&mut p, &[1.0, 0.0], 0.1).unwrap();
        assert!(p[0] < 0.0);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn row_bookkeeping() {
        let mut a = Adam::new(6, AdamConfig::default());
        a.m = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        a.v = a.m.clone();
        a.retain_rows(&[true, false, true], 2);
        assert_eq!(a.m, vec![1.0, 1.0, 3.0, 3.0]);
        a.push_zero_rows(1, 2);
        assert_eq!(a.m, vec![1.0, 1.0, 3.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn length_mismatch_is_error() {
        let mut a = Adam::new(2, AdamConfig::default());
        assert!(a.step(&mut [0.0], &[0.0], 0.1).is_err());
    }
}
