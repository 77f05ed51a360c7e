//! Joint optimization of the Gaussians and the SDF field.
//!
//! Each step renders one training view (cycled in shuffled epochs) for the
//! photometric and sparse-depth terms, casts a ray batch from the same view
//! for the volumetric depth/normal and Eikonal terms, and adds the coupling
//! terms. During warm-up only the photometric and sparse-depth terms are active.
//!
//! A checkpoint directory holds `gaussians.ply`, `field.bin`, `optimizer.bin`
//! (see [`StateBlob`]), `config.json` and `losses.csv`.

mod checkpoint;
mod config;
pub mod densify;

pub use checkpoint::StateBlob;
pub use config::{DensifyConfig, LearningRates, LossWeights, TrainConfig};
pub use densify::{densify_and_prune, DensifyOutcome, DensifyParams, DensifyStats};

use std::path::Path;

use nalgebra::{SVector, Vector3, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coupling::{alignment_loss, projection_distance_loss, tight_opacity_backward, CouplingMode, TightOpacity};
use crate::dataio::{Dataset, DepthPoint};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::image::Image;
use crate::metrics::knn_mean_sq_distance;
use crate::optim::{Adam, AdamConfig};
use crate::rasterizer::{photometric_loss, render, render_backward, RenderOptions};
use crate::scene::gaussians::inverse_sigmoid;
use crate::scene::ply::write_gaussians;
use crate::scene::sh::rgb_to_dc;
use crate::scene::{sigmoid, Aabb, Camera, GaussianGrads, GaussianParams, GaussianSet};
use crate::sdf_field::io::{read_field, write_field};
use crate::sdf_field::{
    eikonal_from_grads, init_sphere, sdf_to_opacity, uniform_samples, FieldGrads, PointGrad, SdfField, SphereInitReport,
};
use crate::volumetric::{consistency_losses, sample_points, sample_rays, ConsistencyOptions, GsTarget};

/// Splatted alpha below which a sparse depth point is ignored.
pub const SFM_MIN_ALPHA: f64 = 0.5;
const KNN_INIT: usize = 3;
const INIT_STREAM: u64 = u64::MAX;
const EPOCH_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Unweighted loss components of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub photometric: f64,
    pub depth: f64,
    pub normal: f64,
    /// Alignment plus projection distance.
    pub align: f64,
    pub eikonal: f64,
    pub sfm: f64,
}

/// Weighted sum of the components; fails on the first non-finite one.
pub fn total_loss(parts: &LossParts, w: &LossWeights, iteration: usize) -> Result<f64> {
    let named = [
        ("photometric", parts.photometric),
        ("volumetric depth", parts.depth),
        ("volumetric normal", parts.normal),
        ("alignment", parts.align),
        ("eikonal", parts.eikonal),
        ("sparse depth", parts.sfm),
    ];
    for (part, v) in named {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { part, iteration });
        }
    }
    Ok(parts.photometric
        + w.depth * parts.depth
        + w.normal * parts.normal
        + w.align * parts.align
        + w.eikonal * parts.eikonal
        + w.sfm * parts.sfm)
}

#[derive(Clone, Debug)]
pub struct SfmDepthLoss {
    pub value: f64,
    pub used: usize,
    pub d_depth: Image,
    pub d_alpha: Image,
}

/// Mean squared difference between alpha-normalized rendered depth and the
/// sparse targets, over points whose rendered alpha is at least [`SFM_MIN_ALPHA`].
pub fn sfm_depth_loss(depth: &Image, alpha: &Image, points: &[DepthPoint]) -> Result<SfmDepthLoss> {
    if !depth.same_shape(alpha) || depth.channels != 1 {
        return Err(Error::usage("depth and alpha must be matching single-channel images"));
    }
    let mut out = SfmDepthLoss {
        value: 0.0,
        used: 0,
        d_depth: Image::new(depth.width, depth.height, 1),
        d_alpha: Image::new(depth.width, depth.height, 1),
    };
    let valid: Vec<(usize, f64)> = points
        .iter()
        .filter(|p| p.u < depth.width && p.v < depth.height)
        .map(|p| (p.v * depth.width + p.u, p.z))
        .filter(|&(i, _)| alpha.data[i] >= SFM_MIN_ALPHA)
        .collect();
    if valid.is_empty() {
        return Ok(out);
    }
    let n = valid.len() as f64;
    for (i, z) in valid {
        let (d, a) = (depth.data[i], alpha.data[i]);
        let r = d / a - z;
        out.value += r * r / n;
        out.d_depth.data[i] += 2.0 * r / (a * n);
        out.d_alpha.data[i] -= 2.0 * r * d / (a * a * n);
        out.used += 1;
    }
    Ok(out)
}

/// Everything recorded about one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepReport {
    pub iteration: usize,
    pub camera: usize,
    pub total: f64,
    pub photometric: f64,
    pub l1: f64,
    pub dssim: f64,
    pub sfm: f64,
    pub depth: f64,
    pub normal: f64,
    pub align: f64,
    pub projection: f64,
    pub eikonal: f64,
    pub depth_rays: usize,
    pub normal_rays: usize,
    pub gaussians: usize,
    pub beta: f64,
    pub s: f64,
    pub geometric: bool,
}

pub const LOSS_CSV_HEADER: &str = "iteration,camera,total,photometric,l1,dssim,sfm,depth,normal,align,projection,eikonal,depth_rays,normal_rays,gaussians,beta,s,geometric";

impl StepReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.camera,
            self.total,
            self.photometric,
            self.l1,
            self.dssim,
            self.sfm,
            self.depth,
            self.normal,
            self.align,
            self.projection,
            self.eikonal,
            self.depth_rays,
            self.normal_rays,
            self.gaussians,
            self.beta,
            self.s,
            u8::from(self.geometric)
        )
    }
}

/// 1.1 times the largest camera distance from the mean camera center.
pub fn scene_extent(cameras: &[Camera], bounds: &Aabb) -> f64 {
    if cameras.is_empty() {
        return 0.5 * bounds.diagonal();
    }
    let mean = cameras.iter().map(|c| c.center()).sum::<Vector3<f64>>() / cameras.len() as f64;
    let r = cameras.iter().map(|c| (c.center() - mean).norm()).fold(0.0, f64::max);
    if r > 1e-9 {
        1.1 * r
    } else {
        0.5 * bounds.diagonal()
    }
}

/// Training view used at `iteration`: a fresh permutation of the views per epoch.
pub fn camera_for_iteration(seed: u64, iteration: usize, views: usize) -> usize {
    let epoch = iteration / views;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EPOCH_SALT);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..views).collect();
    order.shuffle(&mut rng);
    order[iteration % views]
}

fn step_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// Opacity used for rendering: `scale * Phi_beta(f(mu))` under tight coupling, `None` otherwise.
pub fn coupled_opacity(g: &GaussianSet, field: &SdfField, mode: CouplingMode, scale: f64) -> Option<TightOpacity> {
    (mode == CouplingMode::Tight).then(|| {
        let beta = field.beta();
        let sdf = field.eval_values(&g.positions);
        let opacity = sdf.iter().map(|&f| scale * sdf_to_opacity(f, beta)).collect();
        TightOpacity { opacity, sdf }
    })
}

/// Gaussians at the sparse points when present, else uniform in the bounds.
pub fn init_gaussians(data: &Dataset, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<GaussianSet> {
    let (points, colors): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) = match &data.points {
        Some(p) if !p.is_empty() => {
            let colors = p.colors.clone().unwrap_or_else(|| vec![Vector3::repeat(0.5); p.len()]);
            (p.points.clone(), colors)
        }
        _ => {
            if cfg.init_points == 0 {
                return Err(Error::usage("no sparse points and init_points is 0"));
            }
            let pts = uniform_samples(&data.bounds, cfg.init_points, rng);
            let colors = (0..pts.len()).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
            (pts, colors)
        }
    };
    let d2 = knn_mean_sq_distance(&points, KNN_INIT)?;
    let mut g = GaussianSet::new(cfg.sh_degree);
    let logit = inverse_sigmoid(cfg.init_opacity);
    for ((p, c), d) in points.iter().zip(&colors).zip(d2) {
        g.push(GaussianParams {
            position: *p,
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::repeat(0.5 * d.max(1e-7).ln()),
            opacity_logit: logit,
            sh: c.iter().map(|&v| rgb_to_dc(v)).collect(),
        });
    }
    Ok(g)
}

fn adam_rows<const D: usize>(adam: &mut Adam, params: &mut [SVector<f64, D>], grads: &[SVector<f64, D>], lr: f64) -> Result<()> {
    let mut flat: Vec<f64> = params.iter().flat_map(|v| v.iter().copied()).collect();
    let g: Vec<f64> = grads.iter().flat_map(|v| v.iter().copied()).collect();
    adam.step(&mut flat, &g, lr)?;
    for (p, c) in params.iter_mut().zip(flat.chunks_exact(D)) {
        p.copy_from_slice(c);
    }
    Ok(())
}

/// Split per-Gaussian SH rows into the degree-0 part and the rest.
fn split_sh(sh: &[f64], stride: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dc = Vec::with_capacity(sh.len() / stride.max(1) * 3);
    let mut rest = Vec::with_capacity(sh.len() - dc.capacity());
    for row in sh.chunks_exact(stride) {
        dc.extend_from_slice(&row[..3]);
        rest.extend_from_slice(&row[3..]);
    }
    (dc, rest)
}

fn join_sh(dc: &[f64], rest: &[f64], stride: usize, out: &mut [f64]) {
    let r = stride - 3;
    for (i, row) in out.chunks_exact_mut(stride).enumerate() {
        row[..3].copy_from_slice(&dc[i * 3..i * 3 + 3]);
        row[3..].copy_from_slice(&rest[i * r..(i + 1) * r]);
    }
}

const GROUPS: [&str; 9] = ["positions", "rotations", "log_scales", "opacity", "sh_dc", "sh_rest", "features", "mlp", "sharpness"];

#[derive(Clone, Debug, PartialEq)]
struct Optimizers {
    positions: Adam,
    rotations: Adam,
    log_scales: Adam,
    opacity: Adam,
    sh_dc: Adam,
    sh_rest: Adam,
    features: Adam,
    mlp: Adam,
    /// `[log beta, log s]`.
    sharpness: Adam,
}

impl Optimizers {
    fn new(g: &GaussianSet, field: &SdfField) -> Self {
        let c = AdamConfig::default();
        let n = g.len();
        let rest = g.sh_stride() - 3;
        Self {
            positions: Adam::new(3 * n, c),
            rotations: Adam::new(4 * n, c),
            log_scales: Adam::new(3 * n, c),
            opacity: Adam::new(n, c),
            sh_dc: Adam::new(3 * n, c),
            sh_rest: Adam::new(rest * n, c),
            features: Adam::new(field.grid.features.len(), c),
            mlp: Adam::new(field.mlp.params.len(), c),
            sharpness: Adam::new(2, c),
        }
    }

    fn gaussian_groups(&mut self, sh_rest_stride: usize) -> [(&mut Adam, usize); 6] {
        [
            (&mut self.positions, 3),
            (&mut self.rotations, 4),
            (&mut self.log_scales, 3),
            (&mut self.opacity, 1),
            (&mut self.sh_dc, 3),
            (&mut self.sh_rest, sh_rest_stride),
        ]
    }

    fn all(&self) -> [(&'static str, &Adam); 9] {
        [
            (GROUPS[0], &self.positions),
            (GROUPS[1], &self.rotations),
            (GROUPS[2], &self.log_scales),
            (GROUPS[3], &self.opacity),
            (GROUPS[4], &self.sh_dc),
            (GROUPS[5], &self.sh_rest),
            (GROUPS[6], &self.features),
            (GROUPS[7], &self.mlp),
            (GROUPS[8], &self.sharpness),
        ]
    }

    fn all_mut(&mut self) -> [(&'static str, &mut Adam); 9] {
        [
            (GROUPS[0], &mut self.positions),
            (GROUPS[1], &mut self.rotations),
            (GROUPS[2], &mut self.log_scales),
            (GROUPS[3], &mut self.opacity),
            (GROUPS[4], &mut self.sh_dc),
            (GROUPS[5], &mut self.sh_rest),
            (GROUPS[6], &mut self.features),
            (GROUPS[7], &mut self.mlp),
            (GROUPS[8], &mut self.sharpness),
        ]
    }
}

/// Training state: parameters, optimizer moments and bookkeeping.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub gaussians: GaussianSet,
    pub field: SdfField,
    /// Number of completed steps.
    pub iteration: usize,
    pub extent: f64,
    pub background: Vector3<f64>,
    pub stats: DensifyStats,
    pub init_report: Option<SphereInitReport>,
    /// `losses.csv` rows of completed steps.
    pub loss_rows: Vec<String>,
    optim: Optimizers,
}

impl Trainer {
    /// Initialize Gaussians and the sphere-initialized field for `data`.
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        if data.is_empty() {
            return Err(Error::usage("the training split has no views"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let gaussians = init_gaussians(data, &config, &mut rng)?;
        let bounds = data.bounds;
        let radius = config.init_radius.unwrap_or_else(|| 0.25 * bounds.extent().min());
        let mut field = SdfField::new(&config.field, bounds, radius, &mut rng)?;
        let init_report = if config.init_sphere_steps > 0 {
            Some(init_sphere(&mut field, radius, config.init_sphere_steps, &mut rng)?)
        } else {
            None
        };
        let optim = Optimizers::new(&gaussians, &field);
        Ok(Self {
            extent: scene_extent(&data.cameras, &bounds),
            background: Vector3::from(config.background.unwrap_or(data.background)),
            stats: DensifyStats::new(gaussians.len()),
            config,
            gaussians,
            field,
            iteration: 0,
            init_report,
            loss_rows: Vec::new(),
            optim,
        })
    }

    pub fn bounds(&self) -> Aabb {
        self.field.bounds()
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    pub fn position_lr(&self, iteration: usize) -> f64 {
        let lr = &self.config.lr;
        let span = self.config.iterations.saturating_sub(1).max(1) as f64;
        let t = (iteration as f64 / span).min(1.0);
        lr.position * self.extent * lr.position_final_fraction.powf(t)
    }

    /// Opacity override for rendering, when coupling is tight.
    pub fn opacity_override(&self) -> Option<Vec<f64>> {
        coupled_opacity(&self.gaussians, &self.field, self.config.coupling, self.config.opacity_scale).map(|t| t.opacity)
    }

    /// Opacity as seen by the renderer, per Gaussian.
    pub fn effective_opacity(&self) -> Vec<f64> {
        self.opacity_override()
            .unwrap_or_else(|| self.gaussians.opacity_logits.iter().map(|&l| sigmoid(l)).collect())
    }

    pub fn render_options<'a>(&self, opacity: Option<&'a [f64]>) -> RenderOptions<'a> {
        RenderOptions { background: self.background, opacity_override: opacity, record_contributions: false, ..Default::default() }
    }

    /// One optimization step on `data`.
    pub fn step(&mut self, data: &Dataset) -> Result<StepReport> {
        let it = self.iteration;
        let cfg = self.config.clone();
        let w = cfg.weights_at(it);
        let mut rng = step_rng(cfg.seed, it);
        let cam_idx = camera_for_iteration(cfg.seed, it, data.len());
        let cam = &data.cameras[cam_idx];
        let couple = cfg.coupling != CouplingMode::None;
        let (beta, s) = (self.field.beta(), self.field.s());

        let tight = coupled_opacity(&self.gaussians, &self.field, cfg.coupling, cfg.opacity_scale);
        let opts = RenderOptions {
            background: self.background,
            opacity_override: tight.as_ref().map(|t| t.opacity.as_slice()),
            record_contributions: true,
            ..Default::default()
        };
        let out = render(&self.gaussians, cam, &opts)?;
        let photo = photometric_loss(&out.color, &data.images[cam_idx], cfg.lambda_dssim)?;
        let mut report = StepReport {
            iteration: it,
            camera: cam_idx,
            photometric: photo.total,
            l1: photo.l1,
            dssim: photo.dssim,
            beta,
            s,
            geometric: it >= cfg.warmup_steps,
            ..Default::default()
        };

        let sfm = match (&data.sparse_depth, cfg.use_sparse_depth && w.sfm > 0.0) {
            (Some(sd), true) => Some(sfm_depth_loss(&out.depth, &out.alpha, &sd[cam_idx])?),
            _ => None,
        };
        let (d_depth, d_alpha) = match &sfm {
            Some(l) => {
                report.sfm = l.value;
                let scale = |im: &Image| Image { data: im.data.iter().map(|v| v * w.sfm).collect(), ..im.clone() };
                (Some(scale(&l.d_depth)), Some(scale(&l.d_alpha)))
            }
            None => (None, None),
        };
        let rg = render_backward(&self.gaussians, &out, &photo.grad, d_depth.as_ref(), d_alpha.as_ref())?;
        let mut gg: GaussianGrads = rg.gaussians;
        self.stats.record(&rg.visible, &rg.mean2d_ndc, &gg.positions, &out.radii);

        let bounds = self.bounds();
        let mut fg = FieldGrads::zeros_like(&self.field);
        let mut samples_pg: Vec<PointGrad> = Vec::new();
        let mut centers: Option<Vec<PointGrad>> = None;
        if let Some(t) = &tight {
            let (pts, d_beta) = tight_opacity_backward(&self.gaussians, t, &rg.opacity, beta, cfg.opacity_scale);
            fg.log_beta += d_beta * beta;
            centers = Some(pts);
        }
        if couple {
            let mut ray_grads: Vec<Vector3<f64>> = Vec::new();
            if w.depth > 0.0 || w.normal > 0.0 {
                let masks = data.masks.as_ref().filter(|_| cfg.use_masks).map(|m| std::slice::from_ref(&m[cam_idx]));
                let batch = sample_rays(std::slice::from_ref(cam), masks, cfg.rays_per_step, &bounds, &mut rng)?;
                if !batch.is_empty() {
                    let samples = sample_points(&batch, cfg.samples_per_ray, true, &mut rng)?;
                    let evals = self.field.eval_batch(&samples.points);
                    let rot_t = cam.rotation.transpose();
                    let targets: Vec<GsTarget> = batch
                        .rays
                        .iter()
                        .map(|r| {
                            let (i, j) = r.pixel;
                            let p = j * cam.width + i;
                            let a = out.alpha.data[p];
                            let depth = if a > 0.0 { out.depth.data[p] / a } else { 0.0 };
                            let n = Vector3::from_column_slice(out.pseudo_normal.pixel(i, j));
                            GsTarget { depth, normal: rot_t * n, alpha: a }
                        })
                        .collect();
                    let cons = consistency_losses(
                        &batch,
                        &samples,
                        &evals,
                        s,
                        &targets,
                        std::slice::from_ref(cam),
                        ConsistencyOptions { normalize_depth: cfg.normalize_depth },
                        (w.depth, w.normal),
                    )?;
                    report.depth = cons.l_vd;
                    report.normal = cons.l_vn;
                    report.depth_rays = cons.depth_rays;
                    report.normal_rays = cons.normal_rays;
                    fg.log_s += cons.d_s * s;
                    for (k, x) in samples.points.iter().enumerate() {
                        samples_pg.push(PointGrad { x: *x, df: cons.d_f[k], dgrad: cons.d_grad[k] });
                    }
                    ray_grads = evals.iter().map(|e| e.1).collect();
                }
            }
            if w.eikonal > 0.0 {
                let uni = uniform_samples(&bounds, cfg.eikonal_samples, &mut rng);
                let ue = self.field.eval_batch(&uni);
                let n_ray = ray_grads.len();
                ray_grads.extend(ue.iter().map(|e| e.1));
                if !ray_grads.is_empty() {
                    let (l, du) = eikonal_from_grads(&ray_grads)?;
                    report.eikonal = l;
                    for (pg, d) in samples_pg.iter_mut().zip(&du[..n_ray]) {
                        pg.dgrad += d * w.eikonal;
                    }
                    for (x, d) in uni.iter().zip(&du[n_ray..]) {
                        samples_pg.push(PointGrad { x: *x, df: 0.0, dgrad: d * w.eikonal });
                    }
                }
            }
            if w.align > 0.0 && cfg.coupling == CouplingMode::Loose && !self.gaussians.is_empty() {
                let queries = self.field.eval_batch(&self.gaussians.positions);
                let align = alignment_loss(&self.gaussians, &queries)?;
                let proj = projection_distance_loss(&self.gaussians, &queries);
                report.align = align.value;
                report.projection = proj.value;
                let both = align.combined(&proj, 1.0).scaled(w.align);
                for (a, b) in gg.rotations.iter_mut().zip(&both.d_rotations) {
                    *a += b;
                }
                centers = Some(match centers {
                    None => both.points,
                    Some(mut c) => {
                        for (a, b) in c.iter_mut().zip(&both.points) {
                            a.df += b.df;
                            a.dgrad += b.dgrad;
                        }
                        c
                    }
                });
            }
        }
        let field_touched = !samples_pg.is_empty() || centers.is_some();
        if field_touched {
            let n_samples = samples_pg.len();
            let mut all = samples_pg;
            if let Some(c) = &centers {
                all.extend_from_slice(c);
            }
            let dx = self.field.backward(&all, &mut fg);
            if centers.is_some() {
                for (a, d) in gg.positions.iter_mut().zip(&dx[n_samples..]) {
                    *a += d;
                }
            }
        }

        let parts = LossParts {
            photometric: report.photometric,
            depth: report.depth,
            normal: report.normal,
            align: report.align + report.projection,
            eikonal: report.eikonal,
            sfm: report.sfm,
        };
        report.total = total_loss(&parts, &w, it)?;
        if !gg.max_abs().is_finite() {
            return Err(Error::NonFiniteLoss { part: "gaussian gradients", iteration: it });
        }
        if !fg.is_finite() {
            return Err(Error::NonFiniteLoss { part: "field gradients", iteration: it });
        }

        self.apply_gaussian_grads(&gg, it, tight.is_some())?;
        if field_touched {
            let lr = cfg.lr;
            let o = &mut self.optim;
            o.features.step(&mut self.field.grid.features, &fg.features, lr.features)?;
            o.mlp.step(&mut self.field.mlp.params, &fg.mlp, lr.mlp)?;
            let mut sharp = [self.field.log_beta, self.field.log_s];
            o.sharpness.step(&mut sharp, &[fg.log_beta, fg.log_s], lr.sharpness)?;
            [self.field.log_beta, self.field.log_s] = sharp;
        }

        let d = &cfg.densify;
        let next = it + 1;
        if d.enabled && next > d.from && next < cfg.densify_until() && next % d.interval == 0 {
            self.densify(cam.width as f64, &mut rng);
        }
        report.gaussians = self.gaussians.len();
        self.iteration = next;
        self.loss_rows.push(report.csv_row());
        Ok(report)
    }

    fn apply_gaussian_grads(&mut self, gg: &GaussianGrads, it: usize, tight: bool) -> Result<()> {
        let lr = self.config.lr;
        let pos_lr = self.position_lr(it);
        let g = &mut self.gaussians;
        let o = &mut self.optim;
        adam_rows(&mut o.positions, &mut g.positions, &gg.positions, pos_lr)?;
        adam_rows(&mut o.rotations, &mut g.rotations, &gg.rotations, lr.rotation)?;
        adam_rows(&mut o.log_scales, &mut g.log_scales, &gg.log_scales, lr.scale)?;
        if !tight {
            o.opacity.step(&mut g.opacity_logits, &gg.opacity_logits, lr.opacity)?;
        }
        let stride = g.sh_stride();
        let (mut dc, mut rest) = split_sh(&g.sh, stride);
        let (gdc, grest) = split_sh(&gg.sh, stride);
        o.sh_dc.step(&mut dc, &gdc, lr.sh)?;
        if !rest.is_empty() {
            o.sh_rest.step(&mut rest, &grest, lr.sh / 20.0)?;
        }
        join_sh(&dc, &rest, stride, &mut g.sh);
        Ok(())
    }

    fn densify(&mut self, image_width: f64, rng: &mut impl Rng) -> DensifyOutcome {
        let d = self.config.densify;
        let params = DensifyParams {
            grad_threshold: d.grad_threshold,
            small_scale: d.small_fraction * self.extent,
            prune_opacity: d.prune_opacity,
            max_screen_radius: d.max_screen_fraction * image_width,
            max_gaussians: d.max_gaussians,
        };
        let opacity = self.effective_opacity();
        let outcome = densify_and_prune(&mut self.gaussians, &self.stats, &opacity, &params, rng);
        let rest = self.gaussians.sh_stride() - 3;
        for (adam, stride) in self.optim.gaussian_groups(rest) {
            adam.push_zero_rows(outcome.appended, stride);
            adam.retain_rows(&outcome.keep, stride);
        }
        self.stats = DensifyStats::new(self.gaussians.len());
        outcome
    }

    /// Step until `config.iterations`, calling `on_step` after every step.
    pub fn run(&mut self, data: &Dataset, mut on_step: impl FnMut(&Trainer, &StepReport) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let r = self.step(data)?;
            on_step(self, &r)?;
        }
        Ok(())
    }

    pub fn losses_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.loss_rows.len() + 1));
        s.push_str(LOSS_CSV_HEADER);
        s.push('\n');
        for r in &self.loss_rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn state_blob(&self) -> StateBlob {
        let mut b = StateBlob { iteration: self.iteration as u64, sh_degree: self.gaussians.sh_degree() as u32, ..Default::default() };
        for (name, adam) in self.optim.all() {
            b.insert(format!("adam.{name}.m"), adam.t, adam.m.clone());
            b.insert(format!("adam.{name}.v"), adam.t, adam.v.clone());
        }
        let g = &self.gaussians;
        let flat = |v: &mut dyn Iterator<Item = f64>| v.collect::<Vec<f64>>();
        b.insert("param.positions", 0, flat(&mut g.positions.iter().flat_map(|v| v.iter().copied())));
        b.insert("param.rotations", 0, flat(&mut g.rotations.iter().flat_map(|v| v.iter().copied())));
        b.insert("param.log_scales", 0, flat(&mut g.log_scales.iter().flat_map(|v| v.iter().copied())));
        b.insert("param.opacity_logits", 0, g.opacity_logits.clone());
        b.insert("param.sh", 0, g.sh.clone());
        let st = &self.stats;
        b.insert("stats.grad_accum", 0, st.grad_accum.clone());
        b.insert("stats.count", 0, st.count.clone());
        b.insert("stats.pos_grad", 0, flat(&mut st.pos_grad.iter().flat_map(|v| v.iter().copied())));
        b.insert("stats.max_radius", 0, st.max_radius.clone());
        b.insert("meta.extent", 0, vec![self.extent]);
        b.insert("meta.background", 0, self.background.iter().copied().collect());
        b
    }

    /// Write a checkpoint directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_gaussians(&dir.join("gaussians.ply"), &self.gaussians)?;
        write_field(&dir.join("field.bin"), &self.field)?;
        write_atomic(&dir.join("optimizer.bin"), &self.state_blob().to_bytes())?;
        write_atomic(&dir.join("config.json"), self.config.to_json().as_bytes())?;
        write_atomic(&dir.join("losses.csv"), self.losses_csv().as_bytes())
    }

    /// Restore a checkpoint written by [`Trainer::save`]; training continues at the saved iteration.
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("config.json");
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::parse(&cfg_path, e.to_string()))?;
        config.validate().map_err(|e| Error::parse(&cfg_path, e.to_string()))?;
        let field = read_field(&dir.join("field.bin"))?;
        let path = dir.join("optimizer.bin");
        let data = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut b = StateBlob::from_bytes(&data, &path)?;
        let sh_degree = b.sh_degree as usize;
        if sh_degree > crate::scene::sh::MAX_SH_DEGREE {
            return Err(Error::parse(&path, format!("sh degree {sh_degree}")));
        }
        let rows3 = |v: Vec<f64>| v.chunks_exact(3).map(Vector3::from_column_slice).collect::<Vec<_>>();
        let mut g = GaussianSet::new(sh_degree);
        g.positions = rows3(b.take("param.positions", &path)?.1);
        g.rotations = b.take("param.rotations", &path)?.1.chunks_exact(4).map(Vector4::from_column_slice).collect();
        g.log_scales = rows3(b.take("param.log_scales", &path)?.1);
        g.opacity_logits = b.take("param.opacity_logits", &path)?.1;
        g.sh = b.take("param.sh", &path)?.1;
        g.validate().map_err(|e| Error::parse(&path, e.to_string()))?;
        let stats = DensifyStats {
            grad_accum: b.take("stats.grad_accum", &path)?.1,
            count: b.take("stats.count", &path)?.1,
            pos_grad: rows3(b.take("stats.pos_grad", &path)?.1),
            max_radius: b.take("stats.max_radius", &path)?.1,
        };
        let n = g.len();
        if [stats.grad_accum.len(), stats.count.len(), stats.pos_grad.len(), stats.max_radius.len()] != [n; 4] {
            return Err(Error::parse(&path, "densification statistics do not match the gaussian count"));
        }
        let extent = b.take("meta.extent", &path)?.1.first().copied().unwrap_or(1.0);
        let bg = b.take("meta.background", &path)?.1;
        if bg.len() != 3 {
            return Err(Error::parse(&path, "background must have three components"));
        }
        let mut optim = Optimizers::new(&g, &field);
        for (name, adam) in optim.all_mut() {
            let (t, m) = b.take(&format!("adam.{name}.m"), &path)?;
            let (_, v) = b.take(&format!("adam.{name}.v"), &path)?;
            if m.len() != adam.len() || v.len() != adam.len() {
                return Err(Error::parse(&path, format!("adam group `{name}` has the wrong size")));
            }
            adam.t = t;
            adam.m = m;
            adam.v = v;
        }
        let iteration = b.iteration as usize;
        let csv_path = dir.join("losses.csv");
        let loss_rows = match std::fs::read_to_string(&csv_path) {
            Ok(text) => text
                .lines()
                .skip(1)
                .filter(|l| l.split(',').next().and_then(|v| v.parse::<usize>().ok()).is_some_and(|i| i < iteration))
                .map(str::to_string)
                .collect(),
            Err(_) => Vec::new(),
        };
        Ok(Self {
            config,
            gaussians: g,
            field,
            iteration,
            extent,
            background: Vector3::from_column_slice(&bg),
            stats,
            init_report: None,
            loss_rows,
            optim,
        })
    }
}

#[cfg(test)]
mod tests;
