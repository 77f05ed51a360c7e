//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Everything runs on analytic shapes so the page needs no training data:
//! Gaussians are scattered around the true surface and rendered with the
//! same rasterizer and SDF-to-opacity map as the trainer.

use gsdf::dataio::synth::AnalyticScene;
use gsdf::dataio::{PrimitiveKind, SynthSpec};
use gsdf::meshing::{marching_cubes, sample_surface_with_faces};
use gsdf::rasterizer::{render, RenderOptions};
use gsdf::scene::sh::rgb_to_dc;
use gsdf::scene::gaussians::inverse_sigmoid;
use gsdf::scene::{Aabb, Camera, GaussianParams, GaussianSet};
use gsdf::sdf_field::{sdf_to_opacity, SignedDistance};
use gsdf::volumetric::{blend_weights, neus_alpha};
use nalgebra::{Rotation3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const FOV: f64 = 0.8;
const DISTANCE: f64 = 3.0;

fn js_err(e: gsdf::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn orbit_camera(yaw: f64, pitch: f64, size: usize) -> gsdf::Result<Camera> {
    let pitch = pitch.clamp(-1.45, 1.45);
    let eye = DISTANCE * Vector3::new(pitch.cos() * yaw.sin(), pitch.sin(), pitch.cos() * yaw.cos());
    Camera::look_at(eye, Vector3::zeros(), Vector3::y(), size, size, FOV)
}

/// Flat disc aligned with `n`: rotation taking the local z axis to `n`.
fn disc_rotation(n: &Vector3<f64>) -> Vector4<f64> {
    let r = Rotation3::rotation_between(&Vector3::z(), n).unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    let q = UnitQuaternion::from_rotation_matrix(&r);
    Vector4::new(q.w, q.i, q.j, q.k)
}

#[wasm_bindgen]
pub struct Demo {
    scene: AnalyticScene,
    gaussians: GaussianSet,
    bounds: Aabb,
}

#[wasm_bindgen]
impl Demo {
    /// `primitive` is sphere, box, torus or union. Splat centers are pushed
    /// off the surface by up to `jitter` along the normal.
    #[wasm_bindgen(constructor)]
    pub fn new(primitive: &str, count: usize, jitter: f64, seed: u64) -> Result<Demo, JsError> {
        Self::build(primitive, count, jitter, seed).map_err(js_err)
    }

    pub fn count(&self) -> usize {
        self.gaussians.len()
    }

    /// RGBA bytes of a `size` x `size` orbit view. With `tight`, each splat's
    /// opacity becomes `scale * Phi_beta(f(center))` on the true SDF.
    pub fn render(&self, yaw: f64, pitch: f64, size: usize, tight: bool, beta: f64, scale: f64) -> Result<Vec<u8>, JsError> {
        self.render_rgba(yaw, pitch, size, tight, beta, scale).map_err(js_err)
    }

    /// RGBA bytes of the SDF on the plane `z = z`: warm outside, cool inside,
    /// dark contour lines every 0.1 and a white zero level set.
    pub fn sdf_slice(&self, z: f64, size: usize) -> Vec<u8> {
        let (lo, hi) = (self.bounds.min, self.bounds.max);
        let mut rgb = Vec::with_capacity(size * size * 3);
        for j in 0..size {
            for i in 0..size {
                let x = lo.x + (i as f64 + 0.5) / size as f64 * (hi.x - lo.x);
                let y = hi.y - (j as f64 + 0.5) / size as f64 * (hi.y - lo.y);
                rgb.extend(slice_color(self.scene.value(&Vector3::new(x, y, z))));
            }
        }
        to_rgba(&rgb)
    }
}

impl Demo {
    pub fn build(primitive: &str, count: usize, jitter: f64, seed: u64) -> gsdf::Result<Demo> {
        let kind: PrimitiveKind = primitive.parse()?;
        let spec = SynthSpec { primitive: kind, ..Default::default() };
        let scene = AnalyticScene::new(&spec)?;
        let bounds = Aabb::cube(1.0);
        let mesh = marching_cubes(&scene, 48, &bounds)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = sample_surface_with_faces(&mesh, count.max(1), &mut rng)?;
        let radius = (4.0 * mesh.area() / (std::f64::consts::PI * count.max(1) as f64)).sqrt() * 0.6;
        let mut gaussians = GaussianSet::new(0);
        for (p, _) in samples {
            let n = scene.value_and_grad(&p).1.try_normalize(1e-12).unwrap_or_else(Vector3::z);
            let c = scene.shade(&p);
            gaussians.push(GaussianParams {
                position: p + n * rng.random_range(-jitter..=jitter),
                rotation: disc_rotation(&n),
                log_scale: Vector3::new(radius.ln(), radius.ln(), (0.1 * radius).ln()),
                opacity_logit: inverse_sigmoid(0.9),
                sh: vec![rgb_to_dc(c.x), rgb_to_dc(c.y), rgb_to_dc(c.z)],
            });
        }
        Ok(Demo { scene, gaussians, bounds })
    }

    pub fn render_rgba(&self, yaw: f64, pitch: f64, size: usize, tight: bool, beta: f64, scale: f64) -> gsdf::Result<Vec<u8>> {
        let cam = orbit_camera(yaw, pitch, size)?;
        let opacity: Option<Vec<f64>> = tight.then(|| {
            self.gaussians.positions.iter().map(|p| (scale * sdf_to_opacity(self.scene.value(p), beta)).min(0.99)).collect()
        });
        let opts = RenderOptions {
            background: Vector3::repeat(1.0),
            opacity_override: opacity.as_deref(),
            record_contributions: false,
            ..Default::default()
        };
        let out = render(&self.gaussians, &cam, &opts)?;
        Ok(to_rgba(&out.color.clamped01().data))
    }
}

fn slice_color(f: f64) -> [f64; 3] {
    if f.abs() < 0.008 {
        return [1.0, 1.0, 1.0];
    }
    let t = (f.abs() * 2.0).min(1.0);
    let base = if f > 0.0 { [0.95, 0.55 + 0.3 * t, 0.3 + 0.5 * t] } else { [0.25 + 0.5 * t, 0.45 + 0.4 * t, 0.9] };
    let band = (f / 0.1).fract().abs();
    let k = if band < 0.06 || band > 0.94 { 0.6 } else { 1.0 };
    base.map(|c| c * k)
}

fn to_rgba(rgb: &[f64]) -> Vec<u8> {
    rgb.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 1.0].map(|c| (c * 255.0).round() as u8)).collect()
}

/// `n` rows of `[f, Phi_beta(f), neus_weight]` for `f` in `[-range, range]`,
/// flattened. The NeuS weights are those of a ray crossing the surface head-on
/// (`f` decreasing along the ray), sampled at the same `f` values.
#[wasm_bindgen]
pub fn opacity_curves(beta: f64, s: f64, range: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let fs: Vec<f64> = (0..n).map(|k| range - 2.0 * range * k as f64 / (n - 1) as f64).collect();
    let alphas: Vec<f64> = fs.iter().enumerate().map(|(k, &f)| fs.get(k + 1).map_or(0.0, |&g| neus_alpha(f, g, s))).collect();
    let (weights, _) = blend_weights(&alphas);
    fs.iter().zip(&weights).flat_map(|(&f, &w)| [f, sdf_to_opacity(f, beta), w]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_sizes_and_tight_fading() {
        let d = Demo::build("sphere", 300, 0.2, 1).unwrap();
        assert_eq!(d.count(), 300);
        let free = d.render_rgba(0.3, 0.2, 32, false, 50.0, 4.0).unwrap();
        assert_eq!(free.len(), 32 * 32 * 4);
        let sharp = d.render_rgba(0.3, 0.2, 32, true, 500.0, 4.0).unwrap();
        let ink = |img: &[u8]| img.chunks(4).map(|p| 765 - p[0] as u32 - p[1] as u32 - p[2] as u32).sum::<u32>();
        assert!(ink(&sharp) < ink(&free));
    }

    #[test]
    fn slice_marks_the_surface() {
        let d = Demo::build("sphere", 10, 0.0, 0).unwrap();
        let img = d.sdf_slice(0.0, 64);
        assert_eq!(img.len(), 64 * 64 * 4);
        let centre = &img[(32 * 64 + 32) * 4..][..3];
        let corner = &img[..3];
        assert!(centre[2] > centre[0] && corner[0] > corner[2]);
    }

    #[test]
    fn curves_peak_at_the_surface() {
        let c = opacity_curves(40.0, 40.0, 0.5, 101);
        assert_eq!(c.len(), 303);
        let rows: Vec<&[f64]> = c.chunks(3).collect();
        let peak = |col: usize| rows.iter().max_by(|a, b| a[col].total_cmp(&b[col])).unwrap()[0];
        assert!(peak(1).abs() < 0.011);
        assert!(peak(2).abs() < 0.03);
        assert!((rows[50][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unknown_primitive_is_an_error() {
        assert!(Demo::build("cone", 10, 0.0, 0).is_err());
    }
}
