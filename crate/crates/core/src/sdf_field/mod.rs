//! Neural signed distance field: hash-grid encoding plus a one-hidden-layer MLP,
//! with first- and second-order analytic gradients.

pub mod analytic;
pub mod grid;
pub mod io;
pub mod mlp;

pub use analytic::{BoxSdf, SphereSdf, TorusSdf, UnionSdf};
pub use grid::{GridConfig, HashGrid};
pub use mlp::Mlp;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::par;
use crate::scene::Aabb;
use grid::{corner_weight, corner_weight_hvp, MAX_ENCODING};
use mlp::{dot, softplus, softplus_derivs};

/// Anything that can be queried as a signed distance function.
pub trait SignedDistance: Sync {
    fn value(&self, x: &Vector3<f64>) -> f64;
    fn value_and_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>);
    /// d/dx of `df * f(x) + u . grad f(x)`. The default differentiates the gradient numerically.
    fn position_backward(&self, x: &Vector3<f64>, df: f64, u: &Vector3<f64>) -> Vector3<f64> {
        let h = 1e-5;
        let mut out = self.value_and_grad(x).1 * df;
        for k in 0..3 {
            let mut xp = *x;
            xp[k] += h;
            let mut xm = *x;
            xm[k] -= h;
            out[k] += u.dot(&(self.value_and_grad(&xp).1 - self.value_and_grad(&xm).1)) / (2.0 * h);
        }
        out
    }
}

/// Upstream gradient at one query point: dL/df and dL/d(grad f).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointGrad {
    pub x: Vector3<f64>,
    pub df: f64,
    pub dgrad: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub grid: GridConfig,
    pub hidden: usize,
    pub beta_init: f64,
    pub s_init: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { grid: GridConfig::default(), hidden: 64, beta_init: 10.0, s_init: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdfField {
    pub grid: HashGrid,
    pub mlp: Mlp,
    pub log_beta: f64,
    pub log_s: f64,
}

/// Gradients w.r.t. every field parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads {
    pub features: Vec<f64>,
    pub mlp: Vec<f64>,
    pub log_beta: f64,
    pub log_s: f64,
}

impl FieldGrads {
    pub fn zeros_like(field: &SdfField) -> Self {
        Self {
            features: vec![0.0; field.grid.features.len()],
            mlp: vec![0.0; field.mlp.params.len()],
            log_beta: 0.0,
            log_s: 0.0,
        }
    }

    pub fn add_assign(&mut self, o: &FieldGrads) {
        self.features.iter_mut().zip(&o.features).for_each(|(a, b)| *a += b);
        self.mlp.iter_mut().zip(&o.mlp).for_each(|(a, b)| *a += b);
        self.log_beta += o.log_beta;
        self.log_s += o.log_s;
    }

    pub fn scale(&mut self, k: f64) {
        self.features.iter_mut().for_each(|v| *v *= k);
        self.mlp.iter_mut().for_each(|v| *v *= k);
        self.log_beta *= k;
        self.log_s *= k;
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().chain(&self.mlp).all(|v| v.is_finite()) && self.log_beta.is_finite() && self.log_s.is_finite()
    }
}

/// Per-point intermediate values of a full forward pass.
struct Workspace {
    z: Vec<f64>,
    jac: Vec<Vector3<f64>>,
    a: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    /// `w2 * act'(h)`.
    g: Vec<f64>,
    /// `W1^T g`, the gradient of f w.r.t. the MLP input.
    r: Vec<f64>,
}

impl Workspace {
    fn new(input: usize, hidden: usize) -> Self {
        Self {
            z: vec![0.0; input],
            jac: vec![Vector3::zeros(); input],
            a: vec![0.0; hidden],
            d1: vec![0.0; hidden],
            d2: vec![0.0; hidden],
            g: vec![0.0; hidden],
            r: vec![0.0; input],
        }
    }
}

/// Encoding-side gradients of one point, scattered into features afterwards.
struct EncRecords {
    xs: Vec<Vector3<f64>>,
    us: Vec<Vector3<f64>>,
    dz: Vec<f64>,
    dv: Vec<f64>,
}

const CHUNK: usize = 256;

impl SdfField {
    /// Random hash features and an MLP geometrically initialized to a sphere of `radius`.
    pub fn new(config: &FieldConfig, bounds: Aabb, radius: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(config.beta_init > 0.0) || !(config.s_init > 0.0) {
            return Err(Error::usage("beta and s must start positive"));
        }
        let grid = HashGrid::new(config.grid.clone(), bounds, rng)?;
        let mlp = Mlp::geometric(grid.encoding_dim() + 3, config.hidden, radius, rng)?;
        Ok(Self { grid, mlp, log_beta: config.beta_init.ln(), log_s: config.s_init.ln() })
    }

    pub fn bounds(&self) -> Aabb {
        self.grid.bounds
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn s(&self) -> f64 {
        self.log_s.exp()
    }

    fn input_dim(&self) -> usize {
        self.mlp.input
    }

    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        let e = self.grid.encoding_dim();
        let mut z = [0.0; MAX_ENCODING + 3];
        self.grid.encode(x, &mut z[..e]);
        z[e..e + 3].copy_from_slice(x.as_slice());
        self.mlp.forward(&z[..e + 3])
    }

    fn forward_full(&self, x: &Vector3<f64>, ws: &mut Workspace) -> (f64, Vector3<f64>) {
        let e = self.grid.encoding_dim();
        let d = self.input_dim();
        self.grid.encode_with_jacobian(x, &mut ws.z[..e], &mut ws.jac[..e]);
        for k in 0..3 {
            ws.z[e + k] = x[k];
            ws.jac[e + k] = Vector3::ith(k, 1.0);
        }
        let p = &self.mlp.params;
        let (b1, w2) = (self.mlp.b1_offset(), self.mlp.w2_offset());
        let mut f = p[self.mlp.b2_offset()];
        ws.r.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.mlp.hidden {
            let row = self.mlp.w1_row(j);
            let h = p[b1 + j] + dot(row, &ws.z[..d]);
            let (d1, d2) = softplus_derivs(h);
            ws.a[j] = softplus(h);
            ws.d1[j] = d1;
            ws.d2[j] = d2;
            ws.g[j] = p[w2 + j] * d1;
            f += p[w2 + j] * ws.a[j];
            let gj = ws.g[j];
            if gj != 0.0 {
                for (r, w) in ws.r.iter_mut().zip(row) {
                    *r += w * gj;
                }
            }
        }
        let mut grad = Vector3::zeros();
        for k in 0..d {
            grad += ws.jac[k] * ws.r[k];
        }
        (f, grad)
    }

    pub fn eval_with_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let mut ws = Workspace::new(self.input_dim(), self.mlp.hidden);
        self.forward_full(x, &mut ws)
    }

    /// Values and gradients at many points, in order.
    pub fn eval_batch(&self, xs: &[Vector3<f64>]) -> Vec<(f64, Vector3<f64>)> {
        par::map_chunks(xs.len(), CHUNK, |range| {
            let mut ws = Workspace::new(self.input_dim(), self.mlp.hidden);
            range.map(|i| self.forward_full(&xs[i], &mut ws)).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Values only, in order.
    pub fn eval_values(&self, xs: &[Vector3<f64>]) -> Vec<f64> {
        par::map_chunks(xs.len(), CHUNK, |range| range.map(|i| self.eval(&xs[i])).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect()
    }

    /// Backward of one point. Accumulates MLP grads into `mlp_grad` (if given),
    /// writes encoding-side grads into `dz`/`dv`, and returns dL/dx.
    fn backward_point(
        &self,
        pg: &PointGrad,
        ws: &mut Workspace,
        mlp_grad: Option<&mut [f64]>,
        dz_enc: &mut [f64],
        dv_enc: &mut [f64],
    ) -> Vector3<f64> {
        self.forward_full(&pg.x, ws);
        let d = self.input_dim();
        let e = self.grid.encoding_dim();
        let hidden = self.mlp.hidden;
        let p = &self.mlp.params;
        let (b1, w2) = (self.mlp.b1_offset(), self.mlp.w2_offset());
        let u = pg.dgrad;
        let second = u != Vector3::zeros();

        let mut v = [0.0; MAX_ENCODING + 3];
        if second {
            for k in 0..d {
                v[k] = ws.jac[k].dot(&u);
            }
        }
        let mut dz = [0.0; MAX_ENCODING + 3];
        let mut grad_out = mlp_grad;
        for j in 0..hidden {
            let row = self.mlp.w1_row(j);
            let q = if second { dot(row, &v[..d]) } else { 0.0 };
            let delta = pg.df * ws.g[j] + p[w2 + j] * ws.d2[j] * q;
            if let Some(gr) = grad_out.as_deref_mut() {
                gr[w2 + j] += pg.df * ws.a[j] + ws.d1[j] * q;
                gr[b1 + j] += delta;
                let grow = &mut gr[j * d..(j + 1) * d];
                let gj = ws.g[j];
                if second {
                    for k in 0..d {
                        grow[k] += delta * ws.z[k] + gj * v[k];
                    }
                } else {
                    for k in 0..d {
                        grow[k] += delta * ws.z[k];
                    }
                }
            }
            if delta != 0.0 {
                for k in 0..d {
                    dz[k] += row[k] * delta;
                }
            }
        }
        if let Some(gr) = grad_out {
            gr[self.mlp.b2_offset()] += pg.df;
        }

        let mut dx = Vector3::zeros();
        for k in 0..d {
            dx += ws.jac[k] * dz[k];
        }
        dz_enc[..e].copy_from_slice(&dz[..e]);
        if second {
            // dL/dv equals W1^T g, already held in ws.r
            dv_enc[..e].copy_from_slice(&ws.r[..e]);
            let f = self.grid.config.features_per_level;
            let (un, clamped) = self.grid.normalize(&pg.x);
            for l in 0..self.grid.levels.len() {
                let cell = self.grid.cell(l, &un, &clamped);
                for c in 0..8 {
                    let base = self.grid.corner_index(l, &cell, c);
                    let mut s = 0.0;
                    for k in 0..f {
                        s += self.grid.features[base + k] * ws.r[l * f + k];
                    }
                    if s != 0.0 {
                        dx += corner_weight_hvp(&cell, c, &u) * s;
                    }
                }
            }
        } else {
            dv_enc[..e].iter_mut().for_each(|v| *v = 0.0);
        }
        dx
    }

    /// Accumulate parameter gradients of `sum_i df_i f(x_i) + dgrad_i . grad f(x_i)`
    /// into `grads`; returns dL/dx per point.
    pub fn backward(&self, points: &[PointGrad], grads: &mut FieldGrads) -> Vec<Vector3<f64>> {
        let e = self.grid.encoding_dim();
        let n_mlp = self.mlp.params.len();
        let chunks = par::map_chunks(points.len(), CHUNK, |range| {
            let mut ws = Workspace::new(self.input_dim(), self.mlp.hidden);
            let mut mlp_grad = vec![0.0; n_mlp];
            let len = range.len();
            let mut rec = EncRecords {
                xs: Vec::with_capacity(len),
                us: Vec::with_capacity(len),
                dz: vec![0.0; len * e],
                dv: vec![0.0; len * e],
            };
            let mut dxs = Vec::with_capacity(len);
            for (li, i) in range.enumerate() {
                let pg = &points[i];
                let (dz, dv) = (&mut rec.dz[li * e..(li + 1) * e], &mut rec.dv[li * e..(li + 1) * e]);
                dxs.push(self.backward_point(pg, &mut ws, Some(&mut mlp_grad), dz, dv));
                rec.xs.push(pg.x);
                rec.us.push(pg.dgrad);
            }
            (mlp_grad, rec, dxs)
        });
        let mut dx_all = Vec::with_capacity(points.len());
        let f = self.grid.config.features_per_level;
        for (mlp_grad, rec, dxs) in chunks {
            for (a, b) in grads.mlp.iter_mut().zip(&mlp_grad) {
                *a += b;
            }
            for (li, x) in rec.xs.iter().enumerate() {
                let u = rec.us[li];
                let dz = &rec.dz[li * e..(li + 1) * e];
                let dv = &rec.dv[li * e..(li + 1) * e];
                let (un, clamped) = self.grid.normalize(x);
                for l in 0..self.grid.levels.len() {
                    let cell = self.grid.cell(l, &un, &clamped);
                    for c in 0..8 {
                        let (w, dw) = corner_weight(&cell, c);
                        let wu = dw.dot(&u);
                        let base = self.grid.corner_index(l, &cell, c);
                        for k in 0..f {
                            grads.features[base + k] += w * dz[l * f + k] + wu * dv[l * f + k];
                        }
                    }
                }
            }
            dx_all.extend(dxs);
        }
        dx_all
    }
}

impl SignedDistance for SdfField {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.eval(x)
    }

    fn value_and_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        self.eval_with_grad(x)
    }

    fn position_backward(&self, x: &Vector3<f64>, df: f64, u: &Vector3<f64>) -> Vector3<f64> {
        let mut ws = Workspace::new(self.input_dim(), self.mlp.hidden);
        let mut dz = [0.0; MAX_ENCODING];
        let mut dv = [0.0; MAX_ENCODING];
        let pg = PointGrad { x: *x, df, dgrad: *u };
        self.backward_point(&pg, &mut ws, None, &mut dz, &mut dv)
    }
}

/// Bell-shaped SDF-to-opacity map `e^{-bf} / (1 + e^{-bf})^2`.
pub fn sdf_to_opacity(f: f64, beta: f64) -> f64 {
    let s = crate::scene::sigmoid(beta * f);
    s * (1.0 - s)
}

/// Partial derivatives of [`sdf_to_opacity`] w.r.t. `f` and `beta`.
pub fn sdf_to_opacity_grad(f: f64, beta: f64) -> (f64, f64) {
    let s = crate::scene::sigmoid(beta * f);
    let phi = s * (1.0 - s);
    let k = phi * (1.0 - 2.0 * s);
    (beta * k, f * k)
}

/// Mean `(|g| - 1)^2` over gradient samples, with dL/dg per sample.
pub fn eikonal_from_grads(grads: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
    if grads.is_empty() {
        return Err(Error::usage("eikonal loss needs at least one sample"));
    }
    let n = grads.len() as f64;
    let mut loss = 0.0;
    let du = grads
        .iter()
        .map(|g| {
            let m = g.norm();
            loss += (m - 1.0).powi(2);
            if m > 0.0 {
                g * (2.0 * (m - 1.0) / (m * n))
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    Ok((loss / n, du))
}

pub fn eikonal_loss(field: &impl SignedDistance, samples: &[Vector3<f64>]) -> Result<f64> {
    let grads: Vec<Vector3<f64>> = samples.iter().map(|x| field.value_and_grad(x).1).collect();
    Ok(eikonal_from_grads(&grads)?.0)
}

pub fn uniform_samples(bounds: &Aabb, n: usize, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let u = Uniform::new(0.0, 1.0).expect("valid range");
    (0..n)
        .map(|_| {
            let t = Vector3::new(u.sample(rng), u.sample(rng), u.sample(rng));
            bounds.min + bounds.extent().component_mul(&t)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereInitReport {
    pub final_loss: f64,
    /// Mean |f - (|x| - r)| on held-out samples.
    pub residual: f64,
}

pub const INIT_BATCH: usize = 1024;
pub const INIT_HELDOUT: usize = 4096;

/// Fit the field to the sphere SDF `|x| - radius` by L1 regression.
pub fn init_sphere(field: &mut SdfField, radius: f64, steps: usize, rng: &mut impl Rng) -> Result<SphereInitReport> {
    let bounds = field.bounds();
    if !(radius > 0.0) || !bounds.contains(&(bounds.center() + Vector3::repeat(radius) / 3f64.sqrt())) {
        return Err(Error::usage(format!("sphere radius {radius} does not fit the field bounds")));
    }
    let target = |x: &Vector3<f64>| x.norm() - radius;
    let mut adam_feat = Adam::new(field.grid.features.len(), AdamConfig::default());
    let mut adam_mlp = Adam::new(field.mlp.params.len(), AdamConfig::default());
    let mut history: Vec<f64> = Vec::with_capacity(steps);
    let mut last = f64::NAN;
    for step in 0..steps {
        let xs = uniform_samples(&bounds, INIT_BATCH, rng);
        let values = field.eval_values(&xs);
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let pts: Vec<PointGrad> = xs
            .iter()
            .zip(&values)
            .map(|(x, f)| {
                let r = f - target(x);
                loss += r.abs();
                PointGrad { x: *x, df: r.signum() / n, dgrad: Vector3::zeros() }
            })
            .collect();
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Init(format!("sphere fit diverged at step {step}")));
        }
        if step >= 100 && loss > 10.0 * history[step - 100] {
            return Err(Error::Init(format!(
                "sphere fit loss rose from {:.4} to {loss:.4} over 100 steps",
                history[step - 100]
            )));
        }
        history.push(loss);
        last = loss;
        let mut g = FieldGrads::zeros_like(field);
        field.backward(&pts, &mut g);
        adam_feat.step(&mut field.grid.features, &g.features, 1e-2)?;
        adam_mlp.step(&mut field.mlp.params, &g.mlp, 1e-3)?;
    }
    let held = uniform_samples(&bounds, INIT_HELDOUT, rng);
    let residual = field.eval_values(&held).iter().zip(&held).map(|(f, x)| (f - target(x)).abs()).sum::<f64>() / held.len() as f64;
    if residual >= 0.01 * bounds.diagonal() {
        return Err(Error::Init(format!("sphere fit residual {residual:.4} is above 1% of the bounds diagonal")));
    }
    Ok(SphereInitReport { final_loss: last, residual })
}
