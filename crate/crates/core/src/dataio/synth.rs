//! Analytic scenes rendered by sphere tracing, with exact geometry for evaluation.

use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{write_nerf_split, write_sfm_points, Dataset, DepthPoint, PointCloud};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::meshing::{marching_cubes, write_mesh, TriangleMesh};
use crate::par;
use crate::scene::{Aabb, Camera};
use crate::sdf_field::{BoxSdf, SignedDistance, SphereSdf, TorusSdf};

pub const SYNTH_BOUNDS_HALF: f64 = 1.0;
const TRACE_STEPS: usize = 512;
const HIT_EPS: f64 = 1e-7;
const AMBIENT: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Sphere,
    Box,
    Torus,
    Union,
}

impl FromStr for PrimitiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "box" => Ok(Self::Box),
            "torus" => Ok(Self::Torus),
            "union" => Ok(Self::Union),
            _ => Err(Error::usage(format!("unknown primitive `{s}` (sphere, box, torus, union)"))),
        }
    }
}

/// Scene and capture parameters. The union primitive is a sphere of `radius`
/// centered at `(-0.2, 0, 0)` joined with a cube of half-size `half` centered at
/// `(0.35, 0, 0)`; the torus lies in the xz-plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub primitive: PrimitiveKind,
    pub radius: f64,
    pub half: f64,
    pub major: f64,
    pub minor: f64,
    pub views: usize,
    pub test_views: usize,
    pub resolution: usize,
    /// Camera distance from the origin.
    pub distance: f64,
    /// Horizontal field of view, radians.
    pub fov_x: f64,
    pub sparse_per_view: usize,
    pub gt_resolution: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            primitive: PrimitiveKind::Sphere,
            radius: 0.5,
            half: 0.3,
            major: 0.5,
            minor: 0.2,
            views: 32,
            test_views: 8,
            resolution: 64,
            distance: 3.2,
            fov_x: 45f64.to_radians(),
            sparse_per_view: 200,
            gt_resolution: 256,
            seed: 0,
        }
    }
}

/// Directional lights `(direction towards the light, intensity)`.
pub const LIGHTS: [([f64; 3], f64); 2] = [([0.5, 0.3, 0.8], 0.75), ([-0.6, -0.5, 0.25], 0.4)];

struct Part {
    sdf: Box<dyn SignedDistance>,
    albedo: Vector3<f64>,
}

/// Analytic shape with per-part albedo.
pub struct AnalyticScene {
    parts: Vec<Part>,
}

impl AnalyticScene {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        let bad = |what: &str| Err(Error::usage(format!("degenerate {what}")));
        let ok = |v: f64, hi: f64| v > 0.0 && v < hi;
        let red = Vector3::new(0.85, 0.35, 0.25);
        let blue = Vector3::new(0.25, 0.5, 0.85);
        let parts = match spec.primitive {
            PrimitiveKind::Sphere => {
                if !ok(spec.radius, 0.95) {
                    return bad("sphere radius");
                }
                vec![Part { sdf: Box::new(SphereSdf::new(Vector3::zeros(), spec.radius)), albedo: red }]
            }
            PrimitiveKind::Box => {
                if !ok(spec.half, 0.55) {
                    return bad("box half-size");
                }
                vec![Part { sdf: Box::new(BoxSdf::new(Vector3::zeros(), Vector3::repeat(spec.half))), albedo: blue }]
            }
            PrimitiveKind::Torus => {
                if !ok(spec.minor, spec.major) || !ok(spec.major + spec.minor, 0.95) {
                    return bad("torus radii");
                }
                vec![Part {
                    sdf: Box::new(TorusSdf::new(Vector3::zeros(), spec.major, spec.minor)),
                    albedo: Vector3::new(0.3, 0.75, 0.35),
                }]
            }
            PrimitiveKind::Union => {
                if !ok(spec.radius, 0.75) || !ok(spec.half, 0.6) {
                    return bad("union parameters");
                }
                vec![
                    Part { sdf: Box::new(SphereSdf::new(Vector3::new(-0.2, 0.0, 0.0), spec.radius)), albedo: red },
                    Part {
                        sdf: Box::new(BoxSdf::new(Vector3::new(0.35, 0.0, 0.0), Vector3::repeat(spec.half))),
                        albedo: blue,
                    },
                ]
            }
        };
        Ok(Self { parts })
    }

    fn closest(&self, x: &Vector3<f64>) -> &Part {
        self.parts.iter().min_by(|a, b| a.sdf.value(x).total_cmp(&b.sdf.value(x))).unwrap()
    }

    /// Trace a unit-direction ray; returns the hit distance.
    pub fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>, bounds: &Aabb) -> Option<f64> {
        let (mut t, t1) = bounds.intersect_ray(o, d)?;
        for _ in 0..TRACE_STEPS {
            let f = self.value(&(o + d * t));
            if f < HIT_EPS {
                return Some(t);
            }
            t += f;
            if t > t1 {
                return None;
            }
        }
        None
    }

    pub fn shade(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let part = self.closest(p);
        let n = part.sdf.value_and_grad(p).1.try_normalize(1e-12).unwrap_or_else(Vector3::z);
        let mut light = AMBIENT;
        for (dir, w) in LIGHTS {
            light += w * n.dot(&Vector3::from(dir).normalize()).max(0.0);
        }
        (part.albedo * light).map(|c| c.clamp(0.0, 1.0))
    }
}

impl SignedDistance for AnalyticScene {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.parts.iter().map(|p| p.sdf.value(x)).fold(f64::INFINITY, f64::min)
    }

    fn value_and_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        self.closest(x).sdf.value_and_grad(x)
    }

    fn position_backward(&self, x: &Vector3<f64>, df: f64, u: &Vector3<f64>) -> Vector3<f64> {
        self.closest(x).sdf.position_backward(x, df, u)
    }
}

/// Unit directions on a Fibonacci spiral; `phase` in [0, 1) shifts the lattice.
pub fn fibonacci_directions(n: usize, phase: f64) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * (i as f64 + 0.5)) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64 + phase * std::f64::consts::TAU;
            Vector3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

fn orbit_cameras(spec: &SynthSpec, n: usize, phase: f64) -> Result<Vec<Camera>> {
    fibonacci_directions(n, phase)
        .into_iter()
        .map(|d| Camera::look_at(d * spec.distance, Vector3::zeros(), Vector3::z(), spec.resolution, spec.resolution, spec.fov_x))
        .collect()
}

/// Color image, hit mask and per-pixel camera depth (0 on a miss).
pub fn render_view(scene: &AnalyticScene, cam: &Camera, bounds: &Aabb) -> (Image, Vec<bool>, Vec<f64>) {
    let (w, h) = (cam.width, cam.height);
    let rows = par::map_indices(h, |j| {
        let mut row = Vec::with_capacity(w);
        for i in 0..w {
            let (o, d) = cam.pixel_ray(i, j);
            row.push(scene.trace(&o, &d, bounds).map(|t| {
                let p = o + d * t;
                (scene.shade(&p), cam.to_camera(&p).z)
            }));
        }
        row
    });
    let mut img = Image::new(w, h, 3);
    let mut mask = vec![false; w * h];
    let mut depth = vec![0.0; w * h];
    for (j, row) in rows.into_iter().enumerate() {
        for (i, px) in row.into_iter().enumerate() {
            if let Some((c, z)) = px {
                img.pixel_mut(i, j).copy_from_slice(c.as_slice());
                mask[j * w + i] = true;
                depth[j * w + i] = z;
            }
        }
    }
    (img, mask, depth)
}

pub struct SynthScene {
    pub spec: SynthSpec,
    pub train: Dataset,
    pub test: Dataset,
}

impl SynthScene {
    /// Write the dataset in the NeRF-synthetic layout plus `points3d.ply` and `gt_mesh.ply`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_nerf_split(dir, "train", &self.train)?;
        write_nerf_split(dir, "test", &self.test)?;
        if let Some(p) = &self.train.points {
            write_sfm_points(&dir.join("points3d.ply"), p)?;
        }
        if let Some(m) = &self.train.gt_mesh {
            write_mesh(m, &dir.join("gt_mesh.ply"))?;
        }
        let spec = serde_json::to_string_pretty(&self.spec).map_err(|e| Error::usage(e.to_string()))?;
        crate::fsutil::write_atomic(&dir.join("scene.json"), spec.as_bytes())
    }
}

fn split(scene: &AnalyticScene, cams: Vec<Camera>, bounds: Aabb) -> (Dataset, Vec<Vec<f64>>) {
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut depths = Vec::new();
    for c in &cams {
        let (im, m, d) = render_view(scene, c, &bounds);
        images.push(im);
        masks.push(m);
        depths.push(d);
    }
    let names = (0..cams.len()).map(|i| format!("r_{i:03}")).collect();
    let ds = Dataset {
        cameras: cams,
        images,
        masks: Some(masks),
        sparse_depth: None,
        points: None,
        gt_mesh: None,
        bounds,
        background: [0.0; 3],
        names,
    };
    (ds, depths)
}

/// Render an analytic scene from `spec.views` training and `spec.test_views` held-out cameras.
pub fn synth_scene(spec: &SynthSpec, rng: &mut impl Rng) -> Result<SynthScene> {
    if spec.views < 2 {
        return Err(Error::usage("at least two views are required"));
    }
    if spec.resolution < 8 || !(spec.fov_x > 0.0 && spec.fov_x < 3.0) || !(spec.distance > 1.8) {
        return Err(Error::usage("degenerate capture parameters"));
    }
    let scene = AnalyticScene::new(spec)?;
    let bounds = Aabb::cube(SYNTH_BOUNDS_HALF);
    let (mut train, depths) = split(&scene, orbit_cameras(spec, spec.views, 0.0)?, bounds);
    let (test, _) = split(&scene, orbit_cameras(spec, spec.test_views, 0.5)?, bounds);

    let mut cloud = PointCloud { points: Vec::new(), colors: Some(Vec::new()), views: Some(Vec::new()) };
    let mut sparse = Vec::with_capacity(train.len());
    for (v, cam) in train.cameras.iter().enumerate() {
        let mask = &train.masks.as_ref().unwrap()[v];
        let fg: Vec<usize> = (0..mask.len()).filter(|&p| mask[p]).collect();
        let mut pts = Vec::new();
        for k in sample(rng, fg.len(), spec.sparse_per_view.min(fg.len())) {
            let p = fg[k];
            let (u, w) = (p % cam.width, p / cam.width);
            let z = depths[v][p];
            let world = cam.unproject(&nalgebra::Vector2::new(u as f64 + 0.5, w as f64 + 0.5), z);
            cloud.points.push(world);
            cloud.colors.as_mut().unwrap().push(Vector3::from_column_slice(train.images[v].pixel(u, w)));
            cloud.views.as_mut().unwrap().push(v);
            pts.push(DepthPoint { u, v: w, z });
        }
        sparse.push(pts);
    }
    train.sparse_depth = Some(sparse);
    train.points = Some(cloud);
    train.gt_mesh = Some(ground_truth_mesh(spec, &bounds)?);
    Ok(SynthScene { spec: spec.clone(), train, test })
}

pub fn ground_truth_mesh(spec: &SynthSpec, bounds: &Aabb) -> Result<TriangleMesh> {
    marching_cubes(&AnalyticScene::new(spec)?, spec.gt_resolution, bounds)
}
