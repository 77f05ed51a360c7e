//! Datasets in the NeRF-synthetic layout, sparse SfM points and the analytic scene generator.
//!
//! A dataset directory holds `transforms_<split>.json` files with the usual keys
//! (`camera_angle_x`, `frames[].file_path`, `frames[].transform_matrix`), the PNG
//! images they reference, and optionally `points3d.ply` (sparse points; an integer
//! `view` property ties each point to the training frame it was observed in) and
//! `gt_mesh.ply`. Two optional top-level keys are understood as well: `bounds`
//! (`[[xmin, ymin, zmin], [xmax, ymax, zmax]]`) and `background` (`[r, g, b]`).
//!
//! Transform matrices are camera-to-world with the camera looking down -z and +y
//! up. They are converted here, once, to the +z forward, +y down convention used
//! everywhere else.

pub mod synth;

pub use synth::{synth_scene, PrimitiveKind, SynthScene, SynthSpec};

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::image::{read_png, write_png, Image};
use crate::meshing::{read_mesh, TriangleMesh};
use crate::par;
use crate::ply::{self, Element, PlyFile, ScalarType};
use crate::scene::{Aabb, Camera};

pub const NERF_BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];
pub const NERF_BOUNDS_HALF: f64 = 1.5;

/// One sparse depth target: pixel column `u`, row `v`, camera-space depth `z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthPoint {
    pub u: usize,
    pub v: usize,
    pub z: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Vector3<f64>>>,
    /// Index of the view each point was observed in.
    pub views: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    /// RGB in [0, 1], composited over `background`.
    pub images: Vec<Image>,
    pub masks: Option<Vec<Vec<bool>>>,
    pub sparse_depth: Option<Vec<Vec<DepthPoint>>>,
    pub points: Option<PointCloud>,
    pub gt_mesh: Option<TriangleMesh>,
    pub bounds: Aabb,
    pub background: [f64; 3],
    /// Frame file paths as listed in the transforms file.
    pub names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cameras.len();
        if self.images.len() != n {
            return Err(Error::usage(format!("{} images for {n} cameras", self.images.len())));
        }
        for (i, (c, im)) in self.cameras.iter().zip(&self.images).enumerate() {
            if im.width != c.width || im.height != c.height || im.channels != 3 {
                return Err(Error::usage(format!("image {i} does not match its camera")));
            }
        }
        if let Some(m) = &self.masks {
            if m.len() != n || m.iter().zip(&self.cameras).any(|(m, c)| m.len() != c.pixel_count()) {
                return Err(Error::usage("mask shapes do not match the cameras"));
            }
        }
        if let Some(s) = &self.sparse_depth {
            if s.len() != n {
                return Err(Error::usage("one sparse depth list per camera required"));
            }
            for (c, pts) in self.cameras.iter().zip(s) {
                if pts.iter().any(|p| p.u >= c.width || p.v >= c.height || !(p.z > 0.0)) {
                    return Err(Error::usage("sparse depth point outside its image or not in front"));
                }
            }
        }
        if !self.bounds.is_valid() {
            return Err(Error::usage("dataset bounds are degenerate"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Frame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Transforms {
    pub camera_angle_x: f64,
    pub frames: Vec<Frame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Overrides the file's background (or the white default).
    pub background: Option<[f64; 3]>,
    /// Integer image downscale factor; 0 and 1 keep full resolution.
    pub downscale: usize,
}

fn gl_flip() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

/// Camera from a camera-to-world matrix in the -z forward, +y up convention.
pub fn camera_from_transform(m: &[[f64; 4]; 4], width: usize, height: usize, camera_angle_x: f64) -> Result<Camera> {
    let c2w = Matrix4::from_fn(|r, c| m[r][c]);
    let rot_c2w = c2w.fixed_view::<3, 3>(0, 0).into_owned() * gl_flip();
    let center = c2w.fixed_view::<3, 1>(0, 3).into_owned();
    let rotation = rot_c2w.transpose();
    let fx = focal_from_angle(width, camera_angle_x);
    Camera::new(width, height, fx, fx, 0.5 * width as f64, 0.5 * height as f64, rotation, -(rotation * center))
}

/// Inverse of [`camera_from_transform`].
pub fn transform_from_camera(cam: &Camera) -> [[f64; 4]; 4] {
    let r = cam.rotation.transpose() * gl_flip();
    let c = cam.center();
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[(i, j)];
        }
        m[i][3] = c[i];
    }
    m[3][3] = 1.0;
    m
}

pub fn focal_from_angle(width: usize, camera_angle_x: f64) -> f64 {
    0.5 * width as f64 / (0.5 * camera_angle_x).tan()
}

pub fn angle_from_focal(width: usize, fx: f64) -> f64 {
    2.0 * (0.5 * width as f64 / fx).atan()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn frame_image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

fn downscale(img: &Image, f: usize) -> Image {
    if f <= 1 {
        return img.clone();
    }
    let (w, h, c) = (img.width / f, img.height / f, img.channels);
    let mut out = Image::new(w.max(1), h.max(1), c);
    for y in 0..out.height {
        for x in 0..out.width {
            let px = out.pixel_mut(x, y);
            for dy in 0..f {
                for dx in 0..f {
                    let src = img.pixel((x * f + dx).min(img.width - 1), (y * f + dy).min(img.height - 1));
                    for k in 0..c {
                        px[k] += src[k];
                    }
                }
            }
            px.iter_mut().for_each(|v| *v /= (f * f) as f64);
        }
    }
    out
}

/// Split an RGB(A) image into RGB composited over `bg` and an optional alpha mask.
fn composite(img: &Image, bg: [f64; 3]) -> (Image, Option<Vec<bool>>) {
    match img.channels {
        4 => {
            let mut rgb = Image::new(img.width, img.height, 3);
            let mut mask = Vec::with_capacity(img.pixel_count());
            for (o, p) in rgb.data.chunks_mut(3).zip(img.data.chunks(4)) {
                let a = p[3];
                for k in 0..3 {
                    o[k] = p[k] * a + bg[k] * (1.0 - a);
                }
                mask.push(a > 0.5);
            }
            (rgb, Some(mask))
        }
        3 => (img.clone(), None),
        1 => {
            let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
            (Image::from_data(img.width, img.height, 3, data).unwrap(), None)
        }
        _ => {
            let data = img.data.chunks(2).flat_map(|p| [p[0] * p[1], p[0] * p[1], p[0] * p[1]]).collect();
            (Image::from_data(img.width, img.height, 3, data).unwrap(), None)
        }
    }
}

/// Load one split (`train`, `test`, ...) of a NeRF-synthetic style directory.
pub fn load_nerf_synthetic(dir: &Path, split: &str, opts: &LoadOptions) -> Result<Dataset> {
    let json = dir.join(format!("transforms_{split}.json"));
    let tf: Transforms = read_json(&json)?;
    if tf.frames.is_empty() {
        return Err(Error::parse(&json, "no frames"));
    }
    if !(tf.camera_angle_x > 0.0 && tf.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::parse(&json, format!("camera_angle_x {} out of range", tf.camera_angle_x)));
    }
    let background = opts.background.or(tf.background).unwrap_or(NERF_BACKGROUND);
    let loaded = par::map_indices(tf.frames.len(), |i| -> Result<(Camera, Image, Option<Vec<bool>>)> {
        let fr = &tf.frames[i];
        let path = frame_image_path(dir, &fr.file_path);
        let raw = read_png(&path)
            .map_err(|e| Error::parse(&json, format!("frame {i} (`{}`): {e}", fr.file_path)))?;
        let raw = downscale(&raw, opts.downscale);
        let (rgb, mask) = composite(&raw, background);
        let cam = camera_from_transform(&fr.transform_matrix, rgb.width, rgb.height, tf.camera_angle_x)
            .map_err(|e| Error::parse(&json, format!("frame {i}: {e}")))?;
        Ok((cam, rgb, mask))
    });
    let mut cameras = Vec::new();
    let mut images = Vec::new();
    let mut masks = Vec::new();
    for r in loaded {
        let (c, im, m) = r?;
        cameras.push(c);
        images.push(im);
        masks.push(m);
    }
    let masks = masks.iter().all(Option::is_some).then(|| masks.into_iter().flatten().collect());
    let bounds = match tf.bounds {
        Some([lo, hi]) => Aabb::new(Vector3::from(lo), Vector3::from(hi)),
        None => Aabb::cube(NERF_BOUNDS_HALF),
    };
    let mut ds = Dataset {
        cameras,
        images,
        masks,
        sparse_depth: None,
        points: None,
        gt_mesh: None,
        bounds,
        background,
        names: tf.frames.iter().map(|f| f.file_path.clone()).collect(),
    };
    ds.validate().map_err(|e| Error::parse(&json, e.to_string()))?;
    let pts = dir.join("points3d.ply");
    if split == "train" && pts.exists() {
        let cloud = load_sfm_points(&pts)?;
        ds.sparse_depth = sparse_depth_from_points(&cloud, &ds.cameras);
        ds.points = Some(cloud);
    }
    let mesh = dir.join("gt_mesh.ply");
    if mesh.exists() {
        ds.gt_mesh = Some(read_mesh(&mesh)?);
    }
    Ok(ds)
}

/// Points (and optional `red green blue` colors and `view` indices) from a PLY file.
pub fn load_sfm_points(path: &Path) -> Result<PointCloud> {
    let file = ply::read(path)?;
    let Some(el) = file.element("vertex") else {
        return Ok(PointCloud::default());
    };
    if el.count == 0 {
        return Ok(PointCloud::default());
    }
    let get = |n: &str| el.scalar(n).ok_or_else(|| Error::parse(path, format!("vertex has no `{n}`")));
    let (x, y, z) = (get("x")?, get("y")?, get("z")?);
    let points: Vec<Vector3<f64>> = (0..el.count).map(|i| Vector3::new(x[i], y[i], z[i])).collect();
    if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::parse(path, format!("point {i} is not finite")));
    }
    let colors = match (el.scalar("red"), el.scalar("green"), el.scalar("blue")) {
        (Some(r), Some(g), Some(b)) => Some((0..el.count).map(|i| Vector3::new(r[i], g[i], b[i]) / 255.0).collect()),
        _ => None,
    };
    let views = match el.scalar("view") {
        Some(v) => {
            if v.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::parse(path, "negative view index"));
            }
            Some(v.iter().map(|&x| x as usize).collect())
        }
        None => None,
    };
    Ok(PointCloud { points, colors, views })
}

pub fn write_sfm_points(path: &Path, cloud: &PointCloud) -> Result<()> {
    let n = cloud.len();
    let col = |k: usize| cloud.points.iter().map(|p| p[k] as f32 as f64).collect();
    let mut el = Element::new("vertex", n)
        .with_scalar("x", ScalarType::F32, col(0))
        .with_scalar("y", ScalarType::F32, col(1))
        .with_scalar("z", ScalarType::F32, col(2));
    if let Some(c) = &cloud.colors {
        for (k, name) in ["red", "green", "blue"].iter().enumerate() {
            el = el.with_scalar(*name, ScalarType::U8, c.iter().map(|v| (v[k].clamp(0.0, 1.0) * 255.0).round()).collect());
        }
    }
    if let Some(v) = &cloud.views {
        el = el.with_scalar("view", ScalarType::I32, v.iter().map(|&x| x as f64).collect());
    }
    let file = PlyFile { encoding: ply::Encoding::BinaryLittleEndian, elements: vec![el] };
    write_atomic(path, &ply::to_bytes(&file))
}

/// Project each point into the view it belongs to. `None` without view indices.
pub fn sparse_depth_from_points(cloud: &PointCloud, cameras: &[Camera]) -> Option<Vec<Vec<DepthPoint>>> {
    let views = cloud.views.as_ref()?;
    let mut out = vec![Vec::new(); cameras.len()];
    for (p, &v) in cloud.points.iter().zip(views) {
        let Some(cam) = cameras.get(v) else { continue };
        let pc = cam.to_camera(p);
        let Some(px) = cam.project_camera(&pc) else { continue };
        if px.x < 0.0 || px.y < 0.0 {
            continue;
        }
        let (u, w) = (px.x.floor() as usize, px.y.floor() as usize);
        if u < cam.width && w < cam.height {
            out[v].push(DepthPoint { u, v: w, z: pc.z });
        }
    }
    Some(out)
}

/// Write `transforms_<split>.json` and RGBA PNGs (alpha from the masks) under `dir/<split>/`.
pub fn write_nerf_split(dir: &Path, split: &str, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let first = ds.cameras.first().ok_or_else(|| Error::usage("cannot write an empty split"))?;
    let angle = angle_from_focal(first.width, first.fx);
    let sub = dir.join(split);
    std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut frames = Vec::with_capacity(ds.len());
    for (i, (cam, img)) in ds.cameras.iter().zip(&ds.images).enumerate() {
        let name = format!("r_{i:03}");
        let out = match &ds.masks {
            Some(m) => {
                let data = img
                    .data
                    .chunks(3)
                    .zip(&m[i])
                    .flat_map(|(p, &a)| [p[0], p[1], p[2], if a { 1.0 } else { 0.0 }])
                    .collect();
                Image::from_data(img.width, img.height, 4, data)?
            }
            None => img.clone(),
        };
        write_png(&sub.join(format!("{name}.png")), &out)?;
        frames.push(Frame { file_path: format!("./{split}/{name}"), transform_matrix: transform_from_camera(cam) });
    }
    let tf = Transforms {
        camera_angle_x: angle,
        frames,
        bounds: Some([ds.bounds.min.into(), ds.bounds.max.into()]),
        background: Some(ds.background),
    };
    let text = serde_json::to_string_pretty(&tf).map_err(|e| Error::usage(e.to_string()))?;
    write_atomic(&dir.join(format!("transforms_{split}.json")), text.as_bytes())
}
