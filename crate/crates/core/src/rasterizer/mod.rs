//! Tiled front-to-back rasterization of projected Gaussians.
//!
//! Splats are sorted once by camera-space depth; every 16x16 tile keeps the
//! depth-ordered subset overlapping it. Per pixel, color, depth and accumulated
//! opacity are blended with the same weights `T_i * alpha_i`, and the ordered
//! `(splat, alpha, T)` records are kept for the backward pass.

mod backward;
mod loss;
mod normals;

pub use backward::{render_backward, RenderGrads};
pub use loss::{photometric_loss, PhotometricLoss};
pub use normals::pseudo_normal_from_depth;

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::scene::{activate, project_gaussian, sh_to_color, Camera, GaussianSet, DEFAULT_Z_NEAR};

pub const TILE_SIZE: usize = 16;
/// Per-splat alpha is clamped to this value.
pub const ALPHA_MAX: f64 = 0.99;
/// Splats whose alpha at a pixel falls below this are skipped there.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Blending stops once transmittance would drop below this.
pub const T_STOP: f64 = 1e-4;
/// Means projecting further than this multiple of the half-image from the center are culled.
pub const GUARD_BAND: f64 = 1.3;
/// Pixels with accumulated alpha below this get a zero pseudo-normal.
pub const NORMAL_ALPHA_MIN: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct RenderOptions<'a> {
    pub background: Vector3<f64>,
    pub z_near: f64,
    /// Replaces `sigmoid(opacity_logit)` per Gaussian when set.
    pub opacity_override: Option<&'a [f64]>,
    /// Keep the per-pixel records needed by [`render_backward`].
    pub record_contributions: bool,
}

impl Default for RenderOptions<'_> {
    fn default() -> Self {
        Self {
            background: Vector3::zeros(),
            z_near: DEFAULT_Z_NEAR,
            opacity_override: None,
            record_contributions: true,
        }
    }
}

/// A Gaussian that survived culling, in screen space.
#[derive(Clone, Debug)]
pub struct Splat {
    pub id: usize,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Color after clamping to `[0, inf)`.
    pub color: Vector3<f64>,
    pub color_clamped: [bool; 3],
    pub opacity: f64,
    /// Pixel radius beyond which alpha < [`ALPHA_MIN`].
    pub radius: f64,
    pub view_dir: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Index into [`RenderOutputs::splats`].
    pub splat: u32,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
}

/// Ordered per-pixel contribution records, stored per tile.
#[derive(Clone, Debug, Default)]
pub struct ContributionLog {
    tiles: Vec<TileLog>,
    tiles_x: usize,
}

#[derive(Clone, Debug, Default)]
struct TileLog {
    /// `offsets[p]..offsets[p+1]` indexes `records` for tile-local pixel `p`.
    offsets: Vec<usize>,
    records: Vec<Contribution>,
}

impl ContributionLog {
    pub fn pixel(&self, x: usize, y: usize) -> &[Contribution] {
        let (tx, ty) = (x / TILE_SIZE, y / TILE_SIZE);
        let t = &self.tiles[ty * self.tiles_x + tx];
        let p = (y % TILE_SIZE) * TILE_SIZE + (x % TILE_SIZE);
        &t.records[t.offsets[p]..t.offsets[p + 1]]
    }

    pub fn total_records(&self) -> usize {
        self.tiles.iter().map(|t| t.records.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutputs {
    pub camera: Camera,
    pub background: Vector3<f64>,
    /// Composited color, `H x W x 3`.
    pub color: Image,
    /// Blended camera-space depth of splat centers, zero where nothing contributed.
    pub depth: Image,
    /// Accumulated opacity `sum T_i alpha_i`.
    pub alpha: Image,
    /// Camera-space unit normals derived from alpha-normalized depth, zero where invalid.
    pub pseudo_normal: Image,
    /// Transmittance left after the last contributing splat.
    pub final_transmittance: Vec<f64>,
    /// Visible splats in global depth order.
    pub splats: Vec<Splat>,
    /// Per-tile splat indices (into `splats`), ascending.
    pub tile_lists: Vec<Vec<u32>>,
    pub contributions: Option<ContributionLog>,
    /// Screen radius per Gaussian id, zero when culled.
    pub radii: Vec<f64>,
    pub opacity_overridden: bool,
}

impl RenderOutputs {
    pub fn tiles_x(&self) -> usize {
        self.camera.width.div_ceil(TILE_SIZE)
    }
}

fn check_finite(g: &GaussianSet) -> Result<()> {
    g.validate()
}

fn largest_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let mid = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    mid + (half * half + m[(0, 1)] * m[(1, 0)]).max(0.0).sqrt()
}

/// Project, shade and cull every Gaussian; result indexed by Gaussian id.
fn preprocess(g: &GaussianSet, cam: &Camera, opts: &RenderOptions) -> Result<Vec<Option<Splat>>> {
    let act = activate(g)?;
    if let Some(o) = opts.opacity_override {
        if o.len() != g.len() {
            return Err(Error::usage("opacity override length differs from gaussian count"));
        }
        if let Some(i) = o.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { id: i, what: "opacity override" });
        }
    }
    let center = cam.center();
    let (w, h) = (cam.width as f64, cam.height as f64);
    Ok(par::map_indices(g.len(), |i| {
        let cov = act.covariance(i);
        let p = project_gaussian(&g.positions[i], &cov, cam, opts.z_near)?;
        let ndc_x = (p.mean2d.x - 0.5 * w) / (0.5 * w);
        let ndc_y = (p.mean2d.y - 0.5 * h) / (0.5 * h);
        if ndc_x.abs() > GUARD_BAND || ndc_y.abs() > GUARD_BAND {
            return None;
        }
        let det = p.cov2d.determinant();
        if !(det > 0.0) {
            return None;
        }
        let opacity = opts.opacity_override.map_or(act.opacities[i], |o| o[i]);
        if !(opacity * 255.0 > 1.0) {
            return None;
        }
        let radius = (2.0 * (255.0 * opacity).ln() * largest_eigenvalue(&p.cov2d)).sqrt();
        if p.mean2d.x + radius < 0.0 || p.mean2d.x - radius > w || p.mean2d.y + radius < 0.0 || p.mean2d.y - radius > h {
            return None;
        }
        let conic = [p.cov2d[(1, 1)] / det, -p.cov2d[(0, 1)] / det, p.cov2d[(0, 0)] / det];
        let view_dir = (g.positions[i] - center).normalize();
        let raw = sh_to_color(g.sh_coeffs(i), g.sh_degree(), &view_dir);
        let color_clamped = [raw.x < 0.0, raw.y < 0.0, raw.z < 0.0];
        Some(Splat {
            id: i,
            mean2d: p.mean2d,
            cov2d: p.cov2d,
            conic,
            depth: p.depth,
            color: raw.map(|c| c.max(0.0)),
            color_clamped,
            opacity,
            radius,
            view_dir,
        })
    }))
}

/// Gaussian falloff exponent of a splat at pixel center `(px, py)`.
#[inline]
pub(crate) fn splat_power(s: &Splat, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - s.mean2d.x;
    let dy = py - s.mean2d.y;
    let [a, b, c] = s.conic;
    (-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy, dx, dy)
}

struct TileResult {
    color: Vec<Vector3<f64>>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
    t_final: Vec<f64>,
    log: TileLog,
}

fn render_tile(
    tile: usize,
    list: &[u32],
    splats: &[Splat],
    cam: &Camera,
    bg: &Vector3<f64>,
    record: bool,
) -> TileResult {
    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let n = TILE_SIZE * TILE_SIZE;
    let mut out = TileResult {
        color: vec![Vector3::zeros(); n],
        depth: vec![0.0; n],
        alpha: vec![0.0; n],
        t_final: vec![1.0; n],
        log: TileLog {
            offsets: Vec::with_capacity(if record { n + 1 } else { 0 }),
            records: Vec::new(),
        },
    };
    for ly in 0..TILE_SIZE {
        for lx in 0..TILE_SIZE {
            let p = ly * TILE_SIZE + lx;
            if record {
                out.log.offsets.push(out.log.records.len());
            }
            let (x, y) = (tx * TILE_SIZE + lx, ty * TILE_SIZE + ly);
            if x >= cam.width || y >= cam.height {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            let mut d = 0.0;
            let mut a = 0.0;
            for &si in list {
                let s = &splats[si as usize];
                let (power, _, _) = splat_power(s, px, py);
                if power > 0.0 {
                    continue;
                }
                let alpha = (s.opacity * power.exp()).min(ALPHA_MAX);
                if alpha < ALPHA_MIN {
                    continue;
                }
                let test_t = t * (1.0 - alpha);
                if test_t < T_STOP {
                    break;
                }
                let w = alpha * t;
                c += s.color * w;
                d += s.depth * w;
                a += w;
                if record {
                    out.log.records.push(Contribution {
                        splat: si,
                        alpha,
                        transmittance: t,
                    });
                }
                t = test_t;
            }
            out.color[p] = c + bg * t;
            out.depth[p] = d;
            out.alpha[p] = a;
            out.t_final[p] = t;
        }
    }
    if record {
        out.log.offsets.push(out.log.records.len());
    }
    out
}

/// Depth divided by accumulated alpha where alpha is positive.
pub fn normalized_depth(depth: &Image, alpha: &Image) -> Image {
    let mut out = depth.clone();
    for (d, a) in out.data.iter_mut().zip(&alpha.data) {
        if *a > 0.0 {
            *d /= a;
        }
    }
    out
}

/// Render color, depth, alpha and pseudo-normal images of `gaussians` from `cam`.
pub fn render(gaussians: &GaussianSet, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutputs> {
    check_finite(gaussians)?;
    let per_gaussian = preprocess(gaussians, cam, opts)?;
    let radii: Vec<f64> = per_gaussian.iter().map(|s| s.as_ref().map_or(0.0, |s| s.radius)).collect();
    let mut splats: Vec<Splat> = per_gaussian.into_iter().flatten().collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let x0 = ((s.mean2d.x - s.radius) / TILE_SIZE as f64).floor().max(0.0) as usize;
        let y0 = ((s.mean2d.y - s.radius) / TILE_SIZE as f64).floor().max(0.0) as usize;
        let x1 = (((s.mean2d.x + s.radius) / TILE_SIZE as f64).floor().max(0.0) as usize).min(tiles_x - 1);
        let y1 = (((s.mean2d.y + s.radius) / TILE_SIZE as f64).floor().max(0.0) as usize).min(tiles_y - 1);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tile_lists[ty * tiles_x + tx].push(si as u32);
            }
        }
    }

    let record = opts.record_contributions;
    let tiles: Vec<TileResult> = par::map_indices(tile_lists.len(), |t| {
        render_tile(t, &tile_lists[t], &splats, cam, &opts.background, record)
    });

    let (w, h) = (cam.width, cam.height);
    let mut color = Image::new(w, h, 3);
    let mut depth = Image::new(w, h, 1);
    let mut alpha = Image::new(w, h, 1);
    let mut final_t = vec![1.0; w * h];
    for (t, res) in tiles.iter().enumerate() {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        for ly in 0..TILE_SIZE {
            for lx in 0..TILE_SIZE {
                let (x, y) = (tx * TILE_SIZE + lx, ty * TILE_SIZE + ly);
                if x >= w || y >= h {
                    continue;
                }
                let p = ly * TILE_SIZE + lx;
                color.pixel_mut(x, y).copy_from_slice(res.color[p].as_slice());
                depth.data[y * w + x] = res.depth[p];
                alpha.data[y * w + x] = res.alpha[p];
                final_t[y * w + x] = res.t_final[p];
            }
        }
    }
    let contributions = record.then(|| ContributionLog {
        tiles: tiles.into_iter().map(|t| t.log).collect(),
        tiles_x,
    });
    let pseudo_normal = pseudo_normal_from_depth(&normalized_depth(&depth, &alpha), &alpha, cam);
    Ok(RenderOutputs {
        camera: cam.clone(),
        background: opts.background,
        color,
        depth,
        alpha,
        pseudo_normal,
        final_transmittance: final_t,
        splats,
        tile_lists,
        contributions,
        radii,
        opacity_overridden: opts.opacity_override.is_some(),
    })
}
