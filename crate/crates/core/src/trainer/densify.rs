//! Adaptive density control: clone small Gaussians with large screen-space
//! gradients, split large ones, prune transparent or oversized ones.

use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scene::covariance::{normalize_quat, quat_to_rotation};
use crate::scene::GaussianSet;

/// Scale divisor applied to split children.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Running per-Gaussian statistics between densification passes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_accum: Vec<f64>,
    pub count: Vec<f64>,
    /// Sum of world-space position gradients, used for the clone shift.
    pub pos_grad: Vec<Vector3<f64>>,
    pub max_radius: Vec<f64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_accum: vec![0.0; n],
            count: vec![0.0; n],
            pos_grad: vec![Vector3::zeros(); n],
            max_radius: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_accum.is_empty()
    }

    pub fn record(&mut self, visible: &[bool], ndc_grad: &[f64], pos_grad: &[Vector3<f64>], radii: &[f64]) {
        for i in 0..self.len() {
            if visible[i] {
                self.grad_accum[i] += ndc_grad[i];
                self.count[i] += 1.0;
                self.pos_grad[i] += pos_grad[i];
                self.max_radius[i] = self.max_radius[i].max(radii[i]);
            }
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.count[i] > 0.0 {
            self.grad_accum[i] / self.count[i]
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    /// Absolute max-scale boundary between clone and split.
    pub small_scale: f64,
    pub prune_opacity: f64,
    /// Absolute screen radius bound in pixels.
    pub max_screen_radius: f64,
    pub max_gaussians: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// Rows appended to the end of the set, before `keep` is applied.
    pub appended: usize,
    /// Retention mask over the set after appending.
    pub keep: Vec<bool>,
}

/// Clone, split and prune in place. `opacity` is the effective opacity per
/// Gaussian (sigmoid of the logit, or the coupled value). The caller applies
/// `appended` and `keep` to optimizer state.
pub fn densify_and_prune(
    g: &mut GaussianSet,
    stats: &DensifyStats,
    opacity: &[f64],
    p: &DensifyParams,
    rng: &mut impl Rng,
) -> DensifyOutcome {
    let n = g.len();
    let mut out = DensifyOutcome::default();
    let mut parent_removed = vec![false; n];
    let room = p.max_gaussians.saturating_sub(n);
    for i in 0..n {
        if stats.mean_grad(i) < p.grad_threshold {
            continue;
        }
        let scales = g.log_scales[i].map(f64::exp);
        let max_scale = scales.max();
        if max_scale <= p.small_scale {
            if out.appended + 1 > room {
                continue;
            }
            let mut child = g.get(i);
            let dir = -stats.pos_grad[i];
            if let Some(d) = dir.try_normalize(1e-300) {
                child.position += d * max_scale;
            }
            g.push(child);
            out.cloned += 1;
            out.appended += 1;
        } else {
            if out.appended + 2 > room {
                continue;
            }
            let q: Vector4<f64> = normalize_quat(&g.rotations[i]).unwrap_or(Vector4::new(1.0, 0.0, 0.0, 0.0));
            let rot = quat_to_rotation(&q);
            let parent = g.get(i);
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
                let mut child = parent.clone();
                child.position += rot * scales.component_mul(&z);
                child.log_scale = parent.log_scale.map(|s| s - SPLIT_SCALE_DIVISOR.ln());
                g.push(child);
            }
            parent_removed[i] = true;
            out.split += 1;
            out.appended += 2;
        }
    }
    let total = g.len();
    out.keep = (0..total)
        .map(|i| i >= n || (!parent_removed[i] && opacity[i] >= p.prune_opacity && stats.max_radius[i] <= p.max_screen_radius))
        .collect();
    out.pruned = out.keep.iter().take(n).enumerate().filter(|(i, &k)| !k && !parent_removed[*i]).count();
    g.retain_mask(&out.keep);
    out
}
