//! Ray rendering of depth and normals from the SDF with NeuS-style alphas, and
//! the consistency losses against splatted depth and normals.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scene::{sigmoid, Aabb, Camera};

/// Upper clamp keeping `1 - alpha` invertible in the backward pass.
pub const ALPHA_CAP: f64 = 1.0 - 1e-9;
pub const MIN_GS_ALPHA: f64 = 0.5;
pub const MIN_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
    pub camera: usize,
    pub pixel: (usize, usize),
    pub t_near: f64,
    pub t_far: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    /// Rays drawn but discarded for missing the bounds.
    pub dropped: usize,
}

impl RayBatch {
    /// No ray was kept.
    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Ray through the center of pixel `(i, j)` clipped to `bounds`.
pub fn pixel_ray(cam: &Camera, camera: usize, i: usize, j: usize, bounds: &Aabb) -> Option<Ray> {
    let (origin, dir) = cam.pixel_ray(i, j);
    let (t_near, t_far) = bounds.intersect_ray(&origin, &dir)?;
    Some(Ray { origin, dir, camera, pixel: (i, j), t_near, t_far })
}

/// Draw `n` pixels uniformly over the given cameras (restricted to `masks` when
/// given), without replacement unless `n` exceeds the population.
pub fn sample_rays(
    cameras: &[Camera],
    masks: Option<&[Vec<bool>]>,
    n: usize,
    bounds: &Aabb,
    rng: &mut impl Rng,
) -> Result<RayBatch> {
    if n == 0 {
        return Err(Error::usage("ray count must be at least 1"));
    }
    if let Some(m) = masks {
        if m.len() != cameras.len() {
            return Err(Error::usage("one mask per camera required"));
        }
    }
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (c, cam) in cameras.iter().enumerate() {
        let count = cam.pixel_count();
        match masks {
            Some(m) => pool.extend((0..count).filter(|&p| m[c][p]).map(|p| (c, p))),
            None => pool.extend((0..count).map(|p| (c, p))),
        }
    }
    if pool.is_empty() {
        return Ok(RayBatch { rays: Vec::new(), dropped: n });
    }
    let picks: Vec<usize> = if n <= pool.len() {
        index::sample(rng, pool.len(), n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..pool.len())).collect()
    };
    let mut batch = RayBatch::default();
    for k in picks {
        let (c, p) = pool[k];
        let w = cameras[c].width;
        match pixel_ray(&cameras[c], c, p % w, p / w, bounds) {
            Some(r) => batch.rays.push(r),
            None => batch.dropped += 1,
        }
    }
    Ok(batch)
}

/// `m` ascending t-values in `[t_near, t_far]`: one uniform draw per equal
/// sub-interval when stratified, sub-interval midpoints otherwise.
pub fn sample_along_ray(t_near: f64, t_far: f64, m: usize, stratified: bool, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::usage("at least two samples per ray are required"));
    }
    let step = (t_far - t_near) / m as f64;
    Ok((0..m)
        .map(|i| {
            let jitter = if stratified { rng.random_range(0.0..1.0) } else { 0.5 };
            t_near + (i as f64 + jitter) * step
        })
        .collect())
}

/// `max((phi(f_i) - phi(f_next)) / phi(f_i), 0)` with `phi(x) = sigmoid(s x)`.
pub fn neus_alpha(f_i: f64, f_next: f64, s: f64) -> f64 {
    let (pi, pn) = (sigmoid(s * f_i), sigmoid(s * f_next));
    ((pi - pn) / pi).max(0.0)
}

/// [`neus_alpha`] capped below 1, with its partials w.r.t. `(f_i, f_next, s)`.
pub fn neus_alpha_grad(f_i: f64, f_next: f64, s: f64) -> (f64, [f64; 3]) {
    let (pi, pn) = (sigmoid(s * f_i), sigmoid(s * f_next));
    let a = (pi - pn) / pi;
    if a <= 0.0 {
        return (0.0, [0.0; 3]);
    }
    if a > ALPHA_CAP {
        return (ALPHA_CAP, [0.0; 3]);
    }
    // alpha = 1 - pn / pi
    let da_dpi = pn / (pi * pi);
    let da_dpn = -1.0 / pi;
    let (ki, kn) = (pi * (1.0 - pi), pn * (1.0 - pn));
    (a, [da_dpi * ki * s, da_dpn * kn * s, da_dpi * ki * f_i + da_dpn * kn * f_next])
}

/// Blend weights `T_i alpha_i` and their sum.
pub fn blend_weights(alphas: &[f64]) -> (Vec<f64>, f64) {
    let mut t = 1.0;
    let mut total = 0.0;
    let w = alphas
        .iter()
        .map(|a| {
            let w = t * a;
            t *= 1.0 - a;
            total += w;
            w
        })
        .collect();
    (w, total)
}

/// Weighted sum of scalar payloads and the total weight.
pub fn accumulate(alphas: &[f64], values: &[f64]) -> (f64, f64) {
    let (w, total) = blend_weights(alphas);
    (w.iter().zip(values).map(|(w, v)| w * v).sum(), total)
}

/// Sample positions of a batch, flattened ray by ray.
#[derive(Clone, Debug)]
pub struct RaySamples {
    pub ts: Vec<f64>,
    pub points: Vec<Vector3<f64>>,
    pub per_ray: usize,
}

pub fn sample_points(batch: &RayBatch, m: usize, stratified: bool, rng: &mut impl Rng) -> Result<RaySamples> {
    let mut ts = Vec::with_capacity(batch.rays.len() * m);
    let mut points = Vec::with_capacity(batch.rays.len() * m);
    for r in &batch.rays {
        for t in sample_along_ray(r.t_near, r.t_far, m, stratified, rng)? {
            ts.push(t);
            points.push(r.origin + r.dir * t);
        }
    }
    Ok(RaySamples { ts, points, per_ray: m })
}

/// Volumetric depth and normal of one ray. Interval `i` spans samples `i` and
/// `i + 1` and carries the midpoint distance and the mean gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct RayRender {
    /// Distance along the ray, normalized by the weight when requested.
    pub depth: f64,
    pub normal: Vector3<f64>,
    pub weight: f64,
}

fn render_ray(ts: &[f64], evals: &[(f64, Vector3<f64>)], s: f64) -> (RayRender, Vec<f64>, Vec<[f64; 3]>) {
    let k = ts.len() - 1;
    let mut alphas = Vec::with_capacity(k);
    let mut partials = Vec::with_capacity(k);
    for i in 0..k {
        let (a, p) = neus_alpha_grad(evals[i].0, evals[i + 1].0, s);
        alphas.push(a);
        partials.push(p);
    }
    let (w, total) = blend_weights(&alphas);
    let mut depth = 0.0;
    let mut normal = Vector3::zeros();
    for i in 0..k {
        depth += w[i] * 0.5 * (ts[i] + ts[i + 1]);
        normal += (evals[i].1 + evals[i + 1].1) * (0.5 * w[i]);
    }
    (RayRender { depth, normal, weight: total }, alphas, partials)
}

/// Volumetric depth (along the ray, unnormalized) and normal for each ray.
pub fn render_rays(samples: &RaySamples, evals: &[(f64, Vector3<f64>)], s: f64) -> Vec<RayRender> {
    let m = samples.per_ray;
    (0..samples.ts.len() / m)
        .map(|r| render_ray(&samples.ts[r * m..(r + 1) * m], &evals[r * m..(r + 1) * m], s).0)
        .collect()
}

/// Splatted depth and normal at a ray's pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GsTarget {
    /// Camera-space z, already divided by the splat alpha if depths are normalized.
    pub depth: f64,
    /// World-space unit normal, or zero when unavailable.
    pub normal: Vector3<f64>,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyOptions {
    /// Divide the volumetric depth by its accumulated weight.
    pub normalize_depth: bool,
}

impl Default for ConsistencyOptions {
    fn default() -> Self {
        Self { normalize_depth: true }
    }
}

#[derive(Clone, Debug)]
pub struct Consistency {
    pub l_vd: f64,
    pub l_vn: f64,
    pub depth_rays: usize,
    pub normal_rays: usize,
    /// dL/df and dL/d(grad f) at every sample, for `w_d * L_vd + w_n * L_vn`.
    pub d_f: Vec<f64>,
    pub d_grad: Vec<Vector3<f64>>,
    /// dL/ds for the same weighted objective.
    pub d_s: f64,
}

/// Depth and normal consistency between volumetric and splatted geometry,
/// with gradients of `w_d * L_vd + w_n * L_vn` w.r.t. the samples and `s`.
pub fn consistency_losses(
    batch: &RayBatch,
    samples: &RaySamples,
    evals: &[(f64, Vector3<f64>)],
    s: f64,
    targets: &[GsTarget],
    cameras: &[Camera],
    opts: ConsistencyOptions,
    weights: (f64, f64),
) -> Result<Consistency> {
    let m = samples.per_ray;
    let n_rays = batch.rays.len();
    if targets.len() != n_rays || samples.ts.len() != n_rays * m || evals.len() != samples.ts.len() {
        return Err(Error::usage("ray batch, samples, evaluations and targets disagree in size"));
    }
    let mut out = Consistency {
        l_vd: 0.0,
        l_vn: 0.0,
        depth_rays: 0,
        normal_rays: 0,
        d_f: vec![0.0; evals.len()],
        d_grad: vec![Vector3::zeros(); evals.len()],
        d_s: 0.0,
    };
    let mut renders = Vec::with_capacity(n_rays);
    let mut valid = Vec::with_capacity(n_rays);
    for (r, ray) in batch.rays.iter().enumerate() {
        let (rr, alphas, partials) = render_ray(&samples.ts[r * m..(r + 1) * m], &evals[r * m..(r + 1) * m], s);
        let t = &targets[r];
        let ok_depth = t.alpha >= MIN_GS_ALPHA && rr.weight >= MIN_WEIGHT;
        let ok_normal = ok_depth && t.normal.norm() > 0.0 && rr.normal.norm() > 0.0;
        out.depth_rays += usize::from(ok_depth);
        out.normal_rays += usize::from(ok_normal);
        valid.push((ok_depth, ok_normal));
        renders.push((rr, alphas, partials, cameras[ray.camera].rotation.row(2).transpose().dot(&ray.dir)));
    }
    let nd = out.depth_rays.max(1) as f64;
    let nn = out.normal_rays.max(1) as f64;
    let (wd, wn) = weights;
    for (r, (rr, alphas, partials, cos)) in renders.iter().enumerate() {
        let (ok_depth, ok_normal) = valid[r];
        if !ok_depth {
            continue;
        }
        let t = &targets[r];
        // Volumetric camera-space depth.
        let denom = if opts.normalize_depth { rr.weight } else { 1.0 };
        let z = rr.depth / denom * cos;
        let diff = z - t.depth;
        out.l_vd += diff * diff / nd;
        let dz = wd * 2.0 * diff / nd;
        let d_depth = dz * cos / denom;
        let d_weight = if opts.normalize_depth { -dz * cos * rr.depth / (denom * denom) } else { 0.0 };
        let mut d_normal = Vector3::zeros();
        if ok_normal {
            let len = rr.normal.norm();
            let nv = rr.normal / len;
            let ng = t.normal;
            let dot = ng.dot(&nv);
            out.l_vn += ((ng - nv).abs().sum() + (1.0 - dot).abs()) / nn;
            let d_nv = ((nv - ng).map(|v| v.signum() * f64::from(v != 0.0)) - ng * (1.0 - dot).signum()) * (wn / nn);
            d_normal = (Matrix3::identity() - nv * nv.transpose()) * d_nv / len;
        }
        backprop_ray(
            &samples.ts[r * m..(r + 1) * m],
            &evals[r * m..(r + 1) * m],
            alphas,
            partials,
            d_depth,
            &d_normal,
            d_weight,
            &mut out.d_f[r * m..(r + 1) * m],
            &mut out.d_grad[r * m..(r + 1) * m],
            &mut out.d_s,
        );
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn backprop_ray(
    ts: &[f64],
    evals: &[(f64, Vector3<f64>)],
    alphas: &[f64],
    partials: &[[f64; 3]],
    d_depth: f64,
    d_normal: &Vector3<f64>,
    d_weight: f64,
    d_f: &mut [f64],
    d_grad: &mut [Vector3<f64>],
    d_s: &mut f64,
) {
    let k = alphas.len();
    let mut trans = Vec::with_capacity(k);
    let mut t = 1.0;
    for a in alphas {
        trans.push(t);
        t *= 1.0 - a;
    }
    let mut suffix = 0.0;
    for i in (0..k).rev() {
        let w = alphas[i] * trans[i];
        let payload_n = (evals[i].1 + evals[i + 1].1) * 0.5;
        let own = d_depth * 0.5 * (ts[i] + ts[i + 1]) + d_normal.dot(&payload_n) + d_weight;
        let d_alpha = trans[i] * own - suffix / (1.0 - alphas[i]);
        suffix += own * w;
        let half = d_normal * (0.5 * w);
        d_grad[i] += half;
        d_grad[i + 1] += half;
        let p = partials[i];
        d_f[i] += d_alpha * p[0];
        d_f[i + 1] += d_alpha * p[1];
        *d_s += d_alpha * p[2];
    }
}

/// Pixel center as a vector, for callers building rays by hand.
pub fn pixel_center(i: usize, j: usize) -> Vector2<f64> {
    Vector2::new(i as f64 + 0.5, j as f64 + 0.5)
}
