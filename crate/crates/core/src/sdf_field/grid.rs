//! Multi-resolution hash grid with trilinear interpolation.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Aabb;

pub const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];
/// Upper bound on `levels * features_per_level`.
pub const MAX_ENCODING: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub base_resolution: usize,
    pub growth: f64,
    pub log2_table_size: u32,
    pub init_range: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features_per_level: 2,
            base_resolution: 16,
            growth: 1.5,
            log2_table_size: 15,
            init_range: 1e-4,
        }
    }
}

impl GridConfig {
    pub fn encoding_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features_per_level == 0 || self.encoding_dim() > MAX_ENCODING {
            return Err(Error::usage(format!(
                "hash grid needs 1..={MAX_ENCODING} encoding scalars, got {} levels x {}",
                self.levels, self.features_per_level
            )));
        }
        if self.base_resolution < 1 || !(self.growth >= 1.0) || !(1..=28).contains(&self.log2_table_size) {
            return Err(Error::usage("invalid hash grid resolution settings"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelInfo {
    pub resolution: usize,
    pub table_size: usize,
    /// First table entry of this level in the flat feature array.
    pub offset: usize,
    pub dense: bool,
}

/// Integer cell and fractional position of a query at one level.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    pub base: [u32; 3],
    pub frac: [f64; 3],
    /// d(grid position)/dx per axis, zero on clamped axes.
    pub scale: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashGrid {
    pub config: GridConfig,
    pub bounds: Aabb,
    pub levels: Vec<LevelInfo>,
    /// `features[(level.offset + slot) * F + c]`.
    pub features: Vec<f64>,
}

impl HashGrid {
    pub fn new(config: GridConfig, bounds: Aabb, rng: &mut impl Rng) -> Result<Self> {
        let mut g = Self::zeroed(config, bounds)?;
        let r = g.config.init_range;
        for v in &mut g.features {
            *v = rng.random_range(-r..=r);
        }
        Ok(g)
    }

    pub fn zeroed(config: GridConfig, bounds: Aabb) -> Result<Self> {
        config.validate()?;
        if !bounds.is_valid() {
            return Err(Error::usage("field bounds must be a non-empty finite box"));
        }
        let cap = 1usize << config.log2_table_size;
        let mut levels = Vec::with_capacity(config.levels);
        let mut offset = 0;
        for l in 0..config.levels {
            let resolution = (config.base_resolution as f64 * config.growth.powi(l as i32)).floor() as usize;
            let dense_size = (resolution + 1).pow(3);
            let dense = dense_size <= cap;
            let table_size = if dense { dense_size } else { cap };
            levels.push(LevelInfo { resolution, table_size, offset, dense });
            offset += table_size;
        }
        let features = vec![0.0; offset * config.features_per_level];
        Ok(Self { config, bounds, levels, features })
    }

    pub fn encoding_dim(&self) -> usize {
        self.config.encoding_dim()
    }

    /// Normalized coordinates in `[0, 1]^3` and whether any axis was clamped.
    pub(crate) fn normalize(&self, x: &Vector3<f64>) -> ([f64; 3], [bool; 3]) {
        let e = self.bounds.extent();
        let mut u = [0.0; 3];
        let mut clamped = [false; 3];
        for k in 0..3 {
            let v = (x[k] - self.bounds.min[k]) / e[k];
            clamped[k] = !(0.0..=1.0).contains(&v);
            u[k] = v.clamp(0.0, 1.0);
        }
        (u, clamped)
    }

    pub fn is_clamped(&self, x: &Vector3<f64>) -> bool {
        self.normalize(x).1.iter().any(|&c| c)
    }

    pub(crate) fn cell(&self, level: usize, u: &[f64; 3], clamped: &[bool; 3]) -> Cell {
        let res = self.levels[level].resolution;
        let e = self.bounds.extent();
        let mut base = [0u32; 3];
        let mut frac = [0.0; 3];
        let mut scale = [0.0; 3];
        for k in 0..3 {
            let p = u[k] * res as f64;
            let i = (p.floor() as usize).min(res - 1);
            base[k] = i as u32;
            frac[k] = p - i as f64;
            scale[k] = if clamped[k] { 0.0 } else { res as f64 / e[k] };
        }
        Cell { base, frac, scale }
    }

    /// Table slot of an integer grid vertex.
    pub fn slot(&self, level: usize, v: [u32; 3]) -> usize {
        let info = &self.levels[level];
        if info.dense {
            let n = info.resolution + 1;
            v[0] as usize + n * (v[1] as usize + n * v[2] as usize)
        } else {
            let h = v[0].wrapping_mul(PRIMES[0]) ^ v[1].wrapping_mul(PRIMES[1]) ^ v[2].wrapping_mul(PRIMES[2]);
            h as usize & (info.table_size - 1)
        }
    }

    /// Feature array index of corner `c` (bit k set means +1 on axis k).
    #[inline]
    pub(crate) fn corner_index(&self, level: usize, cell: &Cell, c: usize) -> usize {
        let v = [
            cell.base[0] + (c & 1) as u32,
            cell.base[1] + ((c >> 1) & 1) as u32,
            cell.base[2] + ((c >> 2) & 1) as u32,
        ];
        (self.levels[level].offset + self.slot(level, v)) * self.config.features_per_level
    }

    /// Encoding only.
    pub fn encode(&self, x: &Vector3<f64>, out: &mut [f64]) {
        let f = self.config.features_per_level;
        let (u, clamped) = self.normalize(x);
        for l in 0..self.levels.len() {
            let cell = self.cell(l, &u, &clamped);
            let dst = &mut out[l * f..(l + 1) * f];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..8 {
                let w = corner_weight(&cell, c).0;
                let base = self.corner_index(l, &cell, c);
                for (k, d) in dst.iter_mut().enumerate() {
                    *d += w * self.features[base + k];
                }
            }
        }
    }

    /// Encoding and its Jacobian w.r.t. x (`jac[i]` is the gradient of scalar i).
    pub fn encode_with_jacobian(&self, x: &Vector3<f64>, out: &mut [f64], jac: &mut [Vector3<f64>]) {
        let f = self.config.features_per_level;
        let (u, clamped) = self.normalize(x);
        for l in 0..self.levels.len() {
            let cell = self.cell(l, &u, &clamped);
            for k in 0..f {
                out[l * f + k] = 0.0;
                jac[l * f + k] = Vector3::zeros();
            }
            for c in 0..8 {
                let (w, dw) = corner_weight(&cell, c);
                let base = self.corner_index(l, &cell, c);
                for k in 0..f {
                    let v = self.features[base + k];
                    out[l * f + k] += w * v;
                    jac[l * f + k] += dw * v;
                }
            }
        }
    }
}

/// Trilinear weight of corner `c` and its gradient w.r.t. x.
#[inline]
pub(crate) fn corner_weight(cell: &Cell, c: usize) -> (f64, Vector3<f64>) {
    let mut phi = [0.0; 3];
    let mut dphi = [0.0; 3];
    for k in 0..3 {
        if (c >> k) & 1 == 1 {
            phi[k] = cell.frac[k];
            dphi[k] = cell.scale[k];
        } else {
            phi[k] = 1.0 - cell.frac[k];
            dphi[k] = -cell.scale[k];
        }
    }
    (
        phi[0] * phi[1] * phi[2],
        Vector3::new(dphi[0] * phi[1] * phi[2], phi[0] * dphi[1] * phi[2], phi[0] * phi[1] * dphi[2]),
    )
}

/// Hessian-vector product of the trilinear weight of corner `c` (only mixed terms are nonzero).
#[inline]
pub(crate) fn corner_weight_hvp(cell: &Cell, c: usize, u: &Vector3<f64>) -> Vector3<f64> {
    let mut phi = [0.0; 3];
    let mut dphi = [0.0; 3];
    for k in 0..3 {
        if (c >> k) & 1 == 1 {
            phi[k] = cell.frac[k];
            dphi[k] = cell.scale[k];
        } else {
            phi[k] = 1.0 - cell.frac[k];
            dphi[k] = -cell.scale[k];
        }
    }
    let h01 = dphi[0] * dphi[1] * phi[2];
    let h02 = dphi[0] * phi[1] * dphi[2];
    let h12 = phi[0] * dphi[1] * dphi[2];
    Vector3::new(h01 * u[1] + h02 * u[2], h01 * u[0] + h12 * u[2], h02 * u[0] + h12 * u[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> HashGrid {
        HashGrid::new(GridConfig { init_range: 1.0, ..Default::default() }, Aabb::cube(1.0), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn level_layout() {
        let g = grid();
        let res: Vec<usize> = g.levels.iter().map(|l| l.resolution).collect();
        assert_eq!(res, vec![16, 24, 36, 54, 81, 121, 182, 273]);
        assert!(g.levels[0].dense && g.levels[1].dense && !g.levels[2].dense);
        assert_eq!(g.levels[2].table_size, 1 << 15);
    }

    #[test]
    fn corner_query_returns_corner_feature() {
        let g = grid();
        // grid vertex (3, 5, 7) of level 0
        let x = Vector3::new(-1.0 + 2.0 * 3.0 / 16.0, -1.0 + 2.0 * 5.0 / 16.0, -1.0 + 2.0 * 7.0 / 16.0);
        let mut z = vec![0.0; 16];
        g.encode(&x, &mut z);
        let idx = (g.levels[0].offset + g.slot(0, [3, 5, 7])) * 2;
        assert!((z[0] - g.features[idx]).abs() < 1e-12);
        assert!((z[1] - g.features[idx + 1]).abs() < 1e-12);
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let g = grid();
        let x = Vector3::new(-1.0 + 2.0 * 3.5 / 16.0, -1.0 + 2.0 * 5.5 / 16.0, -1.0 + 2.0 * 7.5 / 16.0);
        let mut z = vec![0.0; 16];
        g.encode(&x, &mut z);
        let mut mean = 0.0;
        for c in 0..8 {
            let v = [3 + (c & 1) as u32, 5 + ((c >> 1) & 1) as u32, 7 + ((c >> 2) & 1) as u32];
            mean += g.features[(g.levels[0].offset + g.slot(0, v)) * 2] / 8.0;
        }
        assert!((z[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one_and_hash_is_stable() {
        let g = grid();
        let (u, cl) = g.normalize(&Vector3::new(0.123, -0.77, 0.45));
        for l in 0..g.levels.len() {
            let cell = g.cell(l, &u, &cl);
            let s: f64 = (0..8).map(|c| corner_weight(&cell, c).0).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.slot(5, [10, 20, 30]), g.slot(5, [10, 20, 30]));
        assert!(g.slot(5, [10, 20, 30]) < g.levels[5].table_size);
    }

    #[test]
    fn out_of_bounds_clamps() {
        let g = grid();
        assert!(g.is_clamped(&Vector3::new(1.5, 0.0, 0.0)));
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        g.encode(&Vector3::new(1.5, 0.2, 0.3), &mut a);
        g.encode(&Vector3::new(1.0, 0.2, 0.3), &mut b);
        assert_eq!(a, b);
    }
}
