#![allow(dead_code)]

pub mod grads;
pub mod raster;

/// Relative error with an absolute floor so vanishing gradients compare sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs())).max(1e-6)
}

/// Central difference of `f` around 0 along a single scalar perturbation.
pub fn central(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

pub struct GradReport {
    pub cases: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn new() -> Self {
        Self { cases: 0, worst: 0.0 }
    }

    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.cases += 1;
        self.worst = self.worst.max(rel_err(analytic, numeric));
    }
}
