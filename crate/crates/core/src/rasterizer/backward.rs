use nalgebra::{Matrix2, Vector2, Vector3, Vector4};

use super::{splat_power, RenderOutputs, ALPHA_MAX, TILE_SIZE};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::scene::covariance::{build_covariance_backward, normalize_quat_backward};
use crate::scene::projection::project_gaussian_backward;
use crate::scene::sh::sh_to_color_backward;
use crate::scene::{activate, GaussianGrads, GaussianSet};

/// Gradients produced by [`render_backward`].
#[derive(Clone, Debug)]
pub struct RenderGrads {
    pub gaussians: GaussianGrads,
    /// dL/d(opacity as used by the renderer), per Gaussian.
    pub opacity: Vec<f64>,
    /// Screen-space mean gradient magnitude in NDC units, per Gaussian.
    pub mean2d_ndc: Vec<f64>,
    pub visible: Vec<bool>,
}

#[derive(Clone, Copy, Debug, Default)]
struct SplatGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    opacity: f64,
    depth: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

fn pixel_or_zero(img: Option<&Image>, p: usize) -> f64 {
    img.map_or(0.0, |i| i.data[p])
}

fn check_shape(img: &Image, w: usize, h: usize, c: usize, what: &str) -> Result<()> {
    if img.width != w || img.height != h || img.channels != c {
        return Err(Error::usage(format!(
            "{what} gradient is {}x{}x{}, expected {w}x{h}x{c}",
            img.width, img.height, img.channels
        )));
    }
    Ok(())
}

/// Adjoint of [`super::render`]: maps image-space gradients to Gaussian parameters.
///
/// When the render used an opacity override, the logit gradients are zero and
/// the opacity gradient is reported in [`RenderGrads::opacity`] instead.
pub fn render_backward(
    gaussians: &GaussianSet,
    out: &RenderOutputs,
    d_color: &Image,
    d_depth: Option<&Image>,
    d_alpha: Option<&Image>,
) -> Result<RenderGrads> {
    let log = out
        .contributions
        .as_ref()
        .ok_or_else(|| Error::usage("render_backward needs the contribution log from the forward pass"))?;
    let cam = &out.camera;
    let (w, h) = (cam.width, cam.height);
    check_shape(d_color, w, h, 3, "color")?;
    if let Some(d) = d_depth {
        check_shape(d, w, h, 1, "depth")?;
    }
    if let Some(d) = d_alpha {
        check_shape(d, w, h, 1, "alpha")?;
    }
    if out.radii.len() != gaussians.len() {
        return Err(Error::usage("gaussian set does not match the rendered outputs"));
    }
    let tiles_x = out.tiles_x();
    let splats = &out.splats;
    let bg = out.background;

    let per_tile: Vec<Vec<SplatGrad>> = par::map_indices(out.tile_lists.len(), |t| {
        let list = &out.tile_lists[t];
        let mut acc = vec![SplatGrad::default(); list.len()];
        if list.is_empty() {
            return acc;
        }
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        for ly in 0..TILE_SIZE {
            for lx in 0..TILE_SIZE {
                let (x, y) = (tx * TILE_SIZE + lx, ty * TILE_SIZE + ly);
                if x >= w || y >= h {
                    continue;
                }
                let p = y * w + x;
                let dc = Vector3::from_column_slice(d_color.pixel(x, y));
                let dd = pixel_or_zero(d_depth, p);
                let da = pixel_or_zero(d_alpha, p);
                let recs = log.pixel(x, y);
                if recs.is_empty() {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                // Contribution of everything behind splat k, including the background.
                let mut suffix = out.final_transmittance[p] * bg.dot(&dc);
                for r in recs.iter().rev() {
                    let s = &splats[r.splat as usize];
                    let local = list.binary_search(&r.splat).expect("splat missing from its tile list");
                    let g = &mut acc[local];
                    let wgt = r.alpha * r.transmittance;
                    for ch in 0..3 {
                        g.color[ch] += wgt * dc[ch];
                    }
                    g.depth += wgt * dd;
                    let own = s.color.dot(&dc) + s.depth * dd + da;
                    let d_alpha_k = r.transmittance * own - suffix / (1.0 - r.alpha);
                    suffix += own * wgt;

                    let (power, dx, dy) = splat_power(s, px, py);
                    let e = power.exp();
                    if s.opacity * e > ALPHA_MAX {
                        continue;
                    }
                    g.opacity += d_alpha_k * e;
                    let d_power = d_alpha_k * r.alpha;
                    let [a, b, c] = s.conic;
                    g.conic[0] += -0.5 * dx * dx * d_power;
                    g.conic[1] += -dx * dy * d_power;
                    g.conic[2] += -0.5 * dy * dy * d_power;
                    g.mean2d[0] += (a * dx + b * dy) * d_power;
                    g.mean2d[1] += (b * dx + c * dy) * d_power;
                }
            }
        }
        acc
    });

    let mut splat_grads = vec![SplatGrad::default(); splats.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        for (local, g) in acc.iter().enumerate() {
            splat_grads[out.tile_lists[t][local] as usize].add(g);
        }
    }

    let act = activate(gaussians)?;
    let center = cam.center();
    let stride = gaussians.sh_stride();
    let n = gaussians.len();
    let mut grads = GaussianGrads::zeros_like(gaussians);
    let mut opacity = vec![0.0; n];
    let mut mean2d_ndc = vec![0.0; n];
    let mut visible = vec![false; n];

    struct PerSplat {
        id: usize,
        d_pos: Vector3<f64>,
        d_rot: Vector4<f64>,
        d_log_scale: Vector3<f64>,
        d_opacity: f64,
        d_sh: Vec<f64>,
        ndc: f64,
    }
    let results: Vec<PerSplat> = par::map_indices(splats.len(), |si| {
        let s = &splats[si];
        let g = &splat_grads[si];
        let i = s.id;
        let q_raw = gaussians.rotations[i];
        let q = act.rotations[i];
        let scale = act.scales[i];
        let cov = act.covariance(i);

        let d_raw_color = Vector3::from_fn(|ch, _| if s.color_clamped[ch] { 0.0 } else { g.color[ch] });
        let mut d_sh = vec![0.0; stride];
        let d_dir = sh_to_color_backward(gaussians.sh_coeffs(i), gaussians.sh_degree(), &s.view_dir, &d_raw_color, &mut d_sh);
        let offset = gaussians.positions[i] - center;
        let dist = offset.norm();
        let mut d_pos = (d_dir - s.view_dir * s.view_dir.dot(&d_dir)) / dist;

        let qm = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
        let gq = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
        let d_cov2d = -(qm * gq * qm);
        let d_mean2d = Vector2::new(g.mean2d[0], g.mean2d[1]);
        let (d_mean, d_cov) = project_gaussian_backward(&gaussians.positions[i], &cov, cam, &d_mean2d, &d_cov2d, g.depth);
        d_pos += d_mean;
        let (d_q_unit, d_scale) = build_covariance_backward(&q, &scale, &d_cov);
        PerSplat {
            id: i,
            d_pos,
            d_rot: normalize_quat_backward(&q_raw, &d_q_unit),
            d_log_scale: d_scale.component_mul(&scale),
            d_opacity: g.opacity,
            d_sh,
            ndc: (d_mean2d.x * 0.5 * w as f64).hypot(d_mean2d.y * 0.5 * h as f64),
        }
    });

    for r in results {
        let i = r.id;
        visible[i] = true;
        grads.positions[i] = r.d_pos;
        grads.rotations[i] = r.d_rot;
        grads.log_scales[i] = r.d_log_scale;
        opacity[i] = r.d_opacity;
        if !out.opacity_overridden {
            let o = act.opacities[i];
            grads.opacity_logits[i] = r.d_opacity * o * (1.0 - o);
        }
        grads.sh[i * stride..(i + 1) * stride].copy_from_slice(&r.d_sh);
        mean2d_ndc[i] = r.ndc;
    }
    Ok(RenderGrads {
        gaussians: grads,
        opacity,
        mean2d_ndc,
        visible,
    })
}
