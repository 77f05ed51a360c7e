use nalgebra::{Vector2, Vector3};

use super::NORMAL_ALPHA_MIN;
use crate::image::Image;
use crate::scene::Camera;

/// Camera-space normals from a depth map by crossing central differences of
/// backprojected neighbors. Normals face the camera; pixels that are empty,
/// on the border, or next to an empty pixel get the zero vector.
pub fn pseudo_normal_from_depth(depth: &Image, alpha: &Image, cam: &Camera) -> Image {
    let (w, h) = (depth.width, depth.height);
    let mut out = Image::new(w, h, 3);
    if w < 3 || h < 3 {
        return out;
    }
    let valid = |x: usize, y: usize| alpha.data[y * w + x] >= NORMAL_ALPHA_MIN && depth.data[y * w + x] > 0.0;
    let point = |x: usize, y: usize| {
        cam.unproject_camera(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5), depth.data[y * w + x])
    };
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !(valid(x, y) && valid(x - 1, y) && valid(x + 1, y) && valid(x, y - 1) && valid(x, y + 1)) {
                continue;
            }
            let du = point(x + 1, y) - point(x - 1, y);
            let dv = point(x, y + 1) - point(x, y - 1);
            let n = du.cross(&dv);
            let len = n.norm();
            if !(len > 0.0) {
                continue;
            }
            let mut n: Vector3<f64> = n / len;
            if n.dot(&point(x, y)) > 0.0 {
                n = -n;
            }
            out.pixel_mut(x, y).copy_from_slice(n.as_slice());
        }
    }
    out
}
