//! One-hidden-layer MLP with a scaled softplus activation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Sharpness of the softplus activation.
pub const SOFTPLUS_BETA: f64 = 100.0;

#[inline]
pub fn softplus(h: f64) -> f64 {
    let t = SOFTPLUS_BETA * h;
    if t > 30.0 {
        h
    } else {
        t.exp().ln_1p() / SOFTPLUS_BETA
    }
}

/// First and second derivative of [`softplus`].
#[inline]
pub fn softplus_derivs(h: f64) -> (f64, f64) {
    let s = crate::scene::sigmoid(SOFTPLUS_BETA * h);
    (s, SOFTPLUS_BETA * s * (1.0 - s))
}

/// `f = w2 . softplus(W1 z + b1) + b2`, parameters packed as `[W1 | b1 | w2 | b2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::usage("mlp dimensions must be positive"));
        }
        Ok(Self { input, hidden, params: vec![0.0; hidden * input + 2 * hidden + 1] })
    }

    /// Geometric initialization: `f(x) ~ |x| - radius` from the trailing 3 (xyz) inputs,
    /// with zero weight on every other input.
    pub fn geometric(input: usize, hidden: usize, radius: f64, rng: &mut impl Rng) -> Result<Self> {
        if input < 3 {
            return Err(Error::usage("geometric init needs the xyz skip input"));
        }
        let mut m = Self::zeros(input, hidden)?;
        let h = hidden as f64;
        let first = Normal::new(0.0, 2f64.sqrt() / h.sqrt()).expect("valid std");
        let last = Normal::new(std::f64::consts::PI.sqrt() / h.sqrt(), 1e-4).expect("valid std");
        for j in 0..hidden {
            for k in input - 3..input {
                m.params[j * input + k] = first.sample(rng);
            }
        }
        let w2 = m.w2_offset();
        for j in 0..hidden {
            m.params[w2 + j] = last.sample(rng);
        }
        let b2 = m.b2_offset();
        m.params[b2] = -radius;
        Ok(m)
    }

    #[inline]
    pub fn b1_offset(&self) -> usize {
        self.hidden * self.input
    }

    #[inline]
    pub fn w2_offset(&self) -> usize {
        self.hidden * self.input + self.hidden
    }

    #[inline]
    pub fn b2_offset(&self) -> usize {
        self.hidden * self.input + 2 * self.hidden
    }

    #[inline]
    pub fn w1_row(&self, j: usize) -> &[f64] {
        &self.params[j * self.input..(j + 1) * self.input]
    }

    pub fn forward(&self, z: &[f64]) -> f64 {
        let (b1, w2) = (self.b1_offset(), self.w2_offset());
        let mut f = self.params[self.b2_offset()];
        for j in 0..self.hidden {
            let h = self.params[b1 + j] + dot(self.w1_row(j), z);
            f += self.params[w2 + j] * softplus(h);
        }
        f
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_closed_form_and_derivatives() {
        for h in [-0.3, -0.01, 0.0, 0.004, 0.2, 1.0] {
            let exact = (1.0 + (SOFTPLUS_BETA * h).exp()).ln() / SOFTPLUS_BETA;
            assert!((softplus(h) - exact).abs() < 1e-12);
            let e = 1e-6;
            let (d1, d2) = softplus_derivs(h);
            assert!((d1 - (softplus(h + e) - softplus(h - e)) / (2.0 * e)).abs() < 1e-6);
            let fd2 = (softplus_derivs(h + e).0 - softplus_derivs(h - e).0) / (2.0 * e);
            assert!((d2 - fd2).abs() < 1e-4 * (1.0 + d2.abs()));
        }
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let m = Mlp::zeros(5, 4).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0, 3.0, 4.0, 5.0]), 0.0);
    }
}
