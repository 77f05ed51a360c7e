//! Alignment between Gaussians and the SDF zero level set.
//!
//! Tight coupling replaces each Gaussian's opacity by `Phi_beta(f(mu))`. Loose
//! coupling keeps opacity free and penalizes misaligned shortest axes and the
//! distance from each center to its projection onto the surface.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scene::covariance::{normalize_quat, normalize_quat_backward, shortest_axis_index, shortest_axis_normal_backward};
use crate::scene::GaussianSet;
use crate::sdf_field::{sdf_to_opacity, sdf_to_opacity_grad, PointGrad, SignedDistance};

/// Gradients with norm below this are treated as degenerate.
pub const GRAD_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    Tight,
    Loose,
    /// Independent Gaussians and field.
    None,
}

impl std::str::FromStr for CouplingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tight" => Ok(Self::Tight),
            "loose" => Ok(Self::Loose),
            "none" => Ok(Self::None),
            _ => Err(format!("unknown coupling mode `{s}` (expected tight, loose or none)")),
        }
    }
}

impl std::fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Tight => "tight",
            Self::Loose => "loose",
            Self::None => "none",
        })
    }
}

pub fn unit_normal(g: &Vector3<f64>) -> Vector3<f64> {
    g / g.norm().max(GRAD_EPS)
}

/// Backward of [`unit_normal`] for `|g| >= GRAD_EPS`.
fn unit_normal_backward(g: &Vector3<f64>, d_n: &Vector3<f64>) -> Vector3<f64> {
    let m = g.norm();
    let n = g / m;
    (Matrix3::identity() - n * n.transpose()) * d_n / m
}

#[derive(Clone, Debug)]
pub struct TightOpacity {
    pub opacity: Vec<f64>,
    pub sdf: Vec<f64>,
}

/// `scale * Phi_beta(f(mu_i))` per Gaussian.
pub fn tight_opacity(field: &impl SignedDistance, gaussians: &GaussianSet, beta: f64, scale: f64) -> TightOpacity {
    let sdf: Vec<f64> = gaussians.positions.iter().map(|p| field.value(p)).collect();
    let opacity = sdf.iter().map(|&f| scale * sdf_to_opacity(f, beta)).collect();
    TightOpacity { opacity, sdf }
}

/// Maps dL/d(opacity) to per-center field queries and dL/dbeta.
pub fn tight_opacity_backward(
    gaussians: &GaussianSet,
    t: &TightOpacity,
    d_opacity: &[f64],
    beta: f64,
    scale: f64,
) -> (Vec<PointGrad>, f64) {
    let mut d_beta = 0.0;
    let points = gaussians
        .positions
        .iter()
        .zip(&t.sdf)
        .zip(d_opacity)
        .map(|((x, &f), &d)| {
            let (pf, pb) = sdf_to_opacity_grad(f, beta);
            d_beta += d * scale * pb;
            PointGrad { x: *x, df: d * scale * pf, dgrad: Vector3::zeros() }
        })
        .collect();
    (points, d_beta)
}

/// A coupling loss and its gradients.
///
/// `points[i]` carries dL/df and dL/d(grad f) at Gaussian `i`'s center; the caller
/// pushes them through the field to obtain parameter and center gradients.
#[derive(Clone, Debug)]
pub struct CouplingLoss {
    pub value: f64,
    /// Gaussians skipped because the field gradient vanished at their center.
    pub skipped: usize,
    pub d_rotations: Vec<Vector4<f64>>,
    pub points: Vec<PointGrad>,
}

impl CouplingLoss {
    fn empty(gaussians: &GaussianSet) -> Self {
        Self {
            value: 0.0,
            skipped: 0,
            d_rotations: vec![Vector4::zeros(); gaussians.len()],
            points: gaussians
                .positions
                .iter()
                .map(|x| PointGrad { x: *x, df: 0.0, dgrad: Vector3::zeros() })
                .collect(),
        }
    }

    /// Sum of two losses over the same Gaussians.
    pub fn combined(mut self, other: &CouplingLoss, weight_other: f64) -> Self {
        self.value += weight_other * other.value;
        self.skipped = self.skipped.max(other.skipped);
        for (a, b) in self.d_rotations.iter_mut().zip(&other.d_rotations) {
            *a += b * weight_other;
        }
        for (a, b) in self.points.iter_mut().zip(&other.points) {
            a.df += weight_other * b.df;
            a.dgrad += b.dgrad * weight_other;
        }
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.value *= k;
        self.d_rotations.iter_mut().for_each(|v| *v *= k);
        for p in &mut self.points {
            p.df *= k;
            p.dgrad *= k;
        }
        self
    }
}

/// Field values and gradients at every center.
pub fn query_centers(field: &impl SignedDistance, gaussians: &GaussianSet) -> Vec<(f64, Vector3<f64>)> {
    gaussians.positions.iter().map(|p| field.value_and_grad(p)).collect()
}

/// Mean of `1 - |n_g . n_hat|` over Gaussians with a usable field gradient.
pub fn alignment_loss(gaussians: &GaussianSet, queries: &[(f64, Vector3<f64>)]) -> Result<CouplingLoss> {
    let mut out = CouplingLoss::empty(gaussians);
    let usable = queries.iter().filter(|(_, g)| g.norm() >= GRAD_EPS).count();
    out.skipped = gaussians.len() - usable;
    if usable == 0 {
        return Ok(out);
    }
    let n = usable as f64;
    for (i, (_, grad)) in queries.iter().enumerate() {
        if grad.norm() < GRAD_EPS {
            continue;
        }
        let q = normalize_quat(&gaussians.rotations[i])?;
        let scale = gaussians.log_scales[i].map(f64::exp);
        let axis = shortest_axis_index(&scale);
        let rot = crate::scene::covariance::quat_to_rotation(&q);
        let ng: Vector3<f64> = rot.column(axis).into_owned();
        let nh = grad / grad.norm();
        let c = ng.dot(&nh);
        out.value += (1.0 - c.abs()) / n;
        let sgn = if c >= 0.0 { 1.0 } else { -1.0 };
        let d_ng = -sgn * nh / n;
        let d_nh = -sgn * ng / n;
        let dq = shortest_axis_normal_backward(&q, axis, &d_ng);
        out.d_rotations[i] = normalize_quat_backward(&gaussians.rotations[i], &dq);
        out.points[i].dgrad = unit_normal_backward(grad, &d_nh);
    }
    Ok(out)
}

/// `x - f(x) n_hat(x)` and whether the gradient was degenerate (then `x` is returned).
pub fn nearest_surface_point(field: &impl SignedDistance, x: &Vector3<f64>) -> (Vector3<f64>, bool) {
    let (f, g) = field.value_and_grad(x);
    if g.norm() < GRAD_EPS {
        return (*x, true);
    }
    (x - f * unit_normal(&g), false)
}

/// Mean over Gaussians of `sum_axis |f n_hat_axis|`, the L1 length of the projection step.
pub fn projection_distance_loss(gaussians: &GaussianSet, queries: &[(f64, Vector3<f64>)]) -> CouplingLoss {
    let mut out = CouplingLoss::empty(gaussians);
    let usable = queries.iter().filter(|(_, g)| g.norm() >= GRAD_EPS).count();
    out.skipped = gaussians.len() - usable;
    if usable == 0 {
        return out;
    }
    let n = usable as f64;
    for (i, (f, grad)) in queries.iter().enumerate() {
        if grad.norm() < GRAD_EPS {
            continue;
        }
        let nh = grad / grad.norm();
        let l1 = nh.abs().sum();
        out.value += f.abs() * l1 / n;
        out.points[i].df = f.signum() * f64::from(*f != 0.0) * l1 / n;
        let d_nh = nh.map(|v| v.signum() * f64::from(v != 0.0)) * (f.abs() / n);
        out.points[i].dgrad = unit_normal_backward(grad, &d_nh);
    }
    out
}

/// Mean `|f(mu_i)|` over Gaussians.
pub fn mean_abs_sdf(queries: &[(f64, Vector3<f64>)]) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    queries.iter().map(|(f, _)| f.abs()).sum::<f64>() / queries.len() as f64
}
