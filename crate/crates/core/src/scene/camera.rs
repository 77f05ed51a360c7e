use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with a rigid world-to-camera pose.
///
/// Camera space is right-handed with +x right, +y down and +z forward. Pixel
/// `(i, j)` covers `[i, i+1) x [j, j+1)` so its center projects from
/// `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation block of the world-to-camera transform.
    pub rotation: Matrix3<f64>,
    /// Translation block of the world-to-camera transform.
    pub translation: Vector3<f64>,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain("camera image size must be positive".into()));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Domain(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho < 1e-6) || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Domain("camera rotation is not a proper orthonormal matrix".into()));
        }
        Ok(Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Camera at `eye` looking at `target`, with image-up roughly along `up`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
        fov_x: f64,
    ) -> Result<Self> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::Domain("eye equals target".into()))?;
        let x = (-up)
            .cross(&z)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::Domain("up vector parallel to view direction".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(width, height, fx, fx, 0.5 * width as f64, 0.5 * height as f64, rotation, translation)
    }

    pub fn world_to_camera(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Continuous pixel coordinates of a camera-space point, `None` behind the camera.
    pub fn project_camera(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    pub fn project(&self, p_world: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.project_camera(&self.to_camera(p_world))
    }

    /// Camera-space point at camera depth `z` behind continuous pixel coordinate `px`.
    pub fn unproject_camera(&self, px: &Vector2<f64>, z: f64) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx * z, (px.y - self.cy) / self.fy * z, z)
    }

    pub fn unproject(&self, px: &Vector2<f64>, z: f64) -> Vector3<f64> {
        self.to_world(&self.unproject_camera(px, z))
    }

    /// Unit ray direction in camera space through continuous pixel coordinate `px`.
    pub fn camera_ray(&self, px: &Vector2<f64>) -> Vector3<f64> {
        self.unproject_camera(px, 1.0).normalize()
    }

    /// World-space ray (origin, unit direction) through the center of pixel `(i, j)`.
    pub fn pixel_ray(&self, i: usize, j: usize) -> (Vector3<f64>, Vector3<f64>) {
        let px = Vector2::new(i as f64 + 0.5, j as f64 + 0.5);
        (self.center(), self.rotation.transpose() * self.camera_ray(&px))
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Return a copy with the image resolution divided by `factor`.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor.max(1) as f64;
        Self {
            width: (self.width / factor.max(1)).max(1),
            height: (self.height / factor.max(1)).max(1),
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            ..self.clone()
        }
    }
}
