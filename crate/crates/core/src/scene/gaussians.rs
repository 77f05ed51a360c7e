use nalgebra::{Matrix3, Vector3, Vector4};

use super::covariance::{covariance_unchecked, normalize_quat, quat_to_rotation, Covariance3};
use super::sh::sh_basis_count;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn inverse_sigmoid(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Raw, unconstrained per-Gaussian parameters stored as structure-of-arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub positions: Vec<Vector3<f64>>,
    /// Raw quaternions `(w, x, y, z)`; normalized on activation.
    pub rotations: Vec<Vector4<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    /// `count * sh_stride()` values; per Gaussian, coefficient-major then RGB.
    pub sh: Vec<f64>,
    sh_degree: usize,
}

/// One Gaussian's raw parameters, used when building or editing a set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
}

impl GaussianSet {
    pub fn new(sh_degree: usize) -> Self {
        assert!(sh_degree <= super::sh::MAX_SH_DEGREE, "sh degree {sh_degree} > 3");
        Self {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
            sh_degree,
        }
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn sh_stride(&self) -> usize {
        sh_basis_count(self.sh_degree) * 3
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_coeffs(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn sh_coeffs_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.sh_stride();
        &mut self.sh[i * s..(i + 1) * s]
    }

    pub fn push(&mut self, p: GaussianParams) {
        let stride = self.sh_stride();
        let mut sh = p.sh;
        sh.resize(stride, 0.0);
        self.positions.push(p.position);
        self.rotations.push(p.rotation);
        self.log_scales.push(p.log_scale);
        self.opacity_logits.push(p.opacity_logit);
        self.sh.extend_from_slice(&sh);
    }

    pub fn get(&self, i: usize) -> GaussianParams {
        GaussianParams {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh_coeffs(i).to_vec(),
        }
    }

    /// Keep entries whose mask value is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let stride = self.sh_stride();
        let mut k = keep.iter();
        self.positions.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.rotations.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.log_scales.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.opacity_logits.retain(|_| *k.next().unwrap());
        let mut sh = Vec::with_capacity(self.sh.len());
        for (i, &kp) in keep.iter().enumerate() {
            if kp {
                sh.extend_from_slice(&self.sh[i * stride..(i + 1) * stride]);
            }
        }
        self.sh = sh;
    }

    /// Check the structural invariants (equal array lengths, finite values).
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh.len() != n * self.sh_stride()
        {
            return Err(Error::usage("gaussian parameter arrays have mismatched lengths"));
        }
        for i in 0..n {
            if !self.positions[i].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { id: i, what: "position" });
            }
            if !self.rotations[i].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { id: i, what: "rotation" });
            }
            if !self.log_scales[i].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { id: i, what: "scale" });
            }
            if !self.opacity_logits[i].is_finite() {
                return Err(Error::NonFinite { id: i, what: "opacity" });
            }
            if !self.sh_coeffs(i).iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { id: i, what: "sh" });
            }
        }
        Ok(())
    }
}

/// Constrained parameters derived from a [`GaussianSet`].
#[derive(Clone, Debug)]
pub struct ActivatedGaussians {
    pub rotations: Vec<Vector4<f64>>,
    pub rotation_matrices: Vec<Matrix3<f64>>,
    pub scales: Vec<Vector3<f64>>,
    pub opacities: Vec<f64>,
}

impl ActivatedGaussians {
    pub fn covariance(&self, i: usize) -> Covariance3 {
        covariance_unchecked(&self.rotations[i], &self.scales[i])
    }
}

/// Normalize quaternions, exponentiate log-scales and squash opacity logits.
pub fn activate(g: &GaussianSet) -> Result<ActivatedGaussians> {
    let n = g.len();
    let mut rotations = Vec::with_capacity(n);
    let mut rotation_matrices = Vec::with_capacity(n);
    for (i, q) in g.rotations.iter().enumerate() {
        let u = normalize_quat(q).map_err(|e| Error::Domain(format!("gaussian {i}: {e}")))?;
        rotation_matrices.push(quat_to_rotation(&u));
        rotations.push(u);
    }
    Ok(ActivatedGaussians {
        rotations,
        rotation_matrices,
        scales: g.log_scales.iter().map(|s| s.map(f64::exp)).collect(),
        opacities: g.opacity_logits.iter().map(|&l| sigmoid(l)).collect(),
    })
}

/// Gradients w.r.t. the raw parameters of a [`GaussianSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrads {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
}

impl GaussianGrads {
    pub fn zeros_like(g: &GaussianSet) -> Self {
        let n = g.len();
        Self {
            positions: vec![Vector3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
            sh: vec![0.0; g.sh.len()],
        }
    }

    pub fn add_assign(&mut self, other: &GaussianGrads) {
        for (a, b) in self.positions.iter_mut().zip(&other.positions) {
            *a += b;
        }
        for (a, b) in self.rotations.iter_mut().zip(&other.rotations) {
            *a += b;
        }
        for (a, b) in self.log_scales.iter_mut().zip(&other.log_scales) {
            *a += b;
        }
        for (a, b) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *a += b;
        }
        for (a, b) in self.sh.iter_mut().zip(&other.sh) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.positions.iter_mut().for_each(|v| *v *= k);
        self.rotations.iter_mut().for_each(|v| *v *= k);
        self.log_scales.iter_mut().for_each(|v| *v *= k);
        self.opacity_logits.iter_mut().for_each(|v| *v *= k);
        self.sh.iter_mut().for_each(|v| *v *= k);
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in &self.positions {
            m = m.max(v.amax());
        }
        for v in &self.rotations {
            m = m.max(v.amax());
        }
        for v in &self.log_scales {
            m = m.max(v.amax());
        }
        for v in self.opacity_logits.iter().chain(&self.sh) {
            m = m.max(v.abs());
        }
        m
    }
}
