//! Real spherical harmonics up to degree 3, in the coefficient order used by
//! common Gaussian splatting checkpoints.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Number of basis functions for a given degree.
pub const fn sh_basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values and their derivatives w.r.t. the direction components.
pub struct ShBasis {
    pub values: [f64; 16],
    pub grads: [Vector3<f64>; 16],
    pub count: usize,
}

pub fn sh_basis(degree: usize, d: &Vector3<f64>) -> ShBasis {
    let degree = degree.min(MAX_SH_DEGREE);
    let mut v = [0.0; 16];
    let mut g = [Vector3::zeros(); 16];
    v[0] = SH_C0;
    let (x, y, z) = (d.x, d.y, d.z);
    if degree >= 1 {
        v[1] = -SH_C1 * y;
        g[1] = Vector3::new(0.0, -SH_C1, 0.0);
        v[2] = SH_C1 * z;
        g[2] = Vector3::new(0.0, 0.0, SH_C1);
        v[3] = -SH_C1 * x;
        g[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let c = SH_C2;
        v[4] = c[0] * x * y;
        g[4] = c[0] * Vector3::new(y, x, 0.0);
        v[5] = c[1] * y * z;
        g[5] = c[1] * Vector3::new(0.0, z, y);
        v[6] = c[2] * (2.0 * zz - xx - yy);
        g[6] = c[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        v[7] = c[3] * x * z;
        g[7] = c[3] * Vector3::new(z, 0.0, x);
        v[8] = c[4] * (xx - yy);
        g[8] = c[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
        if degree >= 3 {
            let c = SH_C3;
            v[9] = c[0] * y * (3.0 * xx - yy);
            g[9] = c[0] * Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
            v[10] = c[1] * x * y * z;
            g[10] = c[1] * Vector3::new(y * z, x * z, x * y);
            v[11] = c[2] * y * (4.0 * zz - xx - yy);
            g[11] = c[2] * Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
            v[12] = c[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            g[12] = c[3] * Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
            v[13] = c[4] * x * (4.0 * zz - xx - yy);
            g[13] = c[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
            v[14] = c[5] * z * (xx - yy);
            g[14] = c[5] * Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
            v[15] = c[6] * x * (xx - 3.0 * yy);
            g[15] = c[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
        }
    }
    ShBasis {
        values: v,
        grads: g,
        count: sh_basis_count(degree),
    }
}

/// RGB color of a coefficient block (`count * 3` values, coefficient-major) seen
/// along `view_dir`. Includes the +0.5 offset; unclamped.
pub fn sh_to_color(coeffs: &[f64], degree: usize, view_dir: &Vector3<f64>) -> Vector3<f64> {
    let basis = sh_basis(degree, view_dir);
    let mut c = Vector3::repeat(0.5);
    for k in 0..basis.count {
        for ch in 0..3 {
            c[ch] += basis.values[k] * coeffs[k * 3 + ch];
        }
    }
    c
}

/// Backward of [`sh_to_color`]: accumulates into `d_coeffs` and returns `dL/dview_dir`.
pub fn sh_to_color_backward(
    coeffs: &[f64],
    degree: usize,
    view_dir: &Vector3<f64>,
    d_color: &Vector3<f64>,
    d_coeffs: &mut [f64],
) -> Vector3<f64> {
    let basis = sh_basis(degree, view_dir);
    let mut d_dir = Vector3::zeros();
    for k in 0..basis.count {
        let mut dot = 0.0;
        for ch in 0..3 {
            d_coeffs[k * 3 + ch] += basis.values[k] * d_color[ch];
            dot += coeffs[k * 3 + ch] * d_color[ch];
        }
        d_dir += basis.grads[k] * dot;
    }
    d_dir
}

/// Degree-0 coefficient that reproduces an RGB color.
pub fn rgb_to_dc(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}
