//! EWA projection of 3D Gaussians to screen-space ellipses.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::camera::Camera;
use super::covariance::Covariance3;

/// Low-pass floor added to the diagonal of every projected covariance, in px².
pub const COV2D_FLOOR: f64 = 0.3;

/// Default near plane, scene units.
pub const DEFAULT_Z_NEAR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Projected {
    /// Continuous pixel coordinates of the mean.
    pub mean2d: Vector2<f64>,
    /// Screen-space covariance including [`COV2D_FLOOR`].
    pub cov2d: Matrix2<f64>,
    /// Camera-space z of the mean.
    pub depth: f64,
    pub cam_mean: Vector3<f64>,
}

/// Affine Jacobian of the perspective projection at camera-space point `t`.
pub fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz * iz,
    )
}

/// `J W Σ W^T J^T` without the low-pass floor.
pub fn project_covariance_raw(cov: &Covariance3, cam: &Camera, t: &Vector3<f64>) -> Matrix2<f64> {
    let tm = projection_jacobian(cam, t) * cam.rotation;
    tm * cov * tm.transpose()
}

/// Project a world-space Gaussian. Returns `None` (culled) when the mean is not in
/// front of the near plane.
pub fn project_gaussian(mean: &Vector3<f64>, cov: &Covariance3, cam: &Camera, z_near: f64) -> Option<Projected> {
    let t = cam.to_camera(mean);
    if t.z <= z_near {
        return None;
    }
    let mut cov2d = project_covariance_raw(cov, cam, &t);
    cov2d[(0, 0)] += COV2D_FLOOR;
    cov2d[(1, 1)] += COV2D_FLOOR;
    let mean2d = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
    Some(Projected {
        mean2d,
        cov2d,
        depth: t.z,
        cam_mean: t,
    })
}

/// Backpropagate through [`project_gaussian`].
///
/// `d_cov2d` holds the gradient w.r.t. each entry of the 2x2 covariance treated as a
/// general matrix. Returns `(dL/dmean_world, dL/dΣ)`.
pub fn project_gaussian_backward(
    mean: &Vector3<f64>,
    cov: &Covariance3,
    cam: &Camera,
    d_mean2d: &Vector2<f64>,
    d_cov2d: &Matrix2<f64>,
    d_depth: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    let t = cam.to_camera(mean);
    let j = projection_jacobian(cam, &t);
    let w = cam.rotation;
    let tm = j * w;

    let d_cov = tm.transpose() * d_cov2d * tm;
    let d_tm = (d_cov2d + d_cov2d.transpose()) * tm * cov;
    let d_j = d_tm * w.transpose();

    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_t = Vector3::zeros();
    // Jacobian entries
    d_t.z += d_j[(0, 0)] * (-fx * iz2) + d_j[(1, 1)] * (-fy * iz2);
    d_t.x += d_j[(0, 2)] * (-fx * iz2);
    d_t.z += d_j[(0, 2)] * (2.0 * fx * t.x * iz3);
    d_t.y += d_j[(1, 2)] * (-fy * iz2);
    d_t.z += d_j[(1, 2)] * (2.0 * fy * t.y * iz3);
    // screen-space mean
    d_t.x += d_mean2d.x * fx * iz;
    d_t.y += d_mean2d.y * fy * iz;
    d_t.z += -d_mean2d.x * fx * t.x * iz2 - d_mean2d.y * fy * t.y * iz2;
    d_t.z += d_depth;

    (w.transpose() * d_t, d_cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::covariance::build_covariance;
    use nalgebra::Vector4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn axis_cam(f: f64) -> Camera {
        Camera::new(200, 200, f, f, 100.0, 100.0, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn worked_example_on_axis() {
        let cam = axis_cam(100.0);
        let mean = Vector3::new(0.0, 0.0, 2.0);
        let j = projection_jacobian(&cam, &mean);
        assert_eq!(j, Matrix2x3::new(50.0, 0.0, 0.0, 0.0, 50.0, 0.0));
        let p = project_gaussian(&mean, &Matrix3::identity(), &cam, DEFAULT_Z_NEAR).unwrap();
        assert!((p.cov2d - Matrix2::identity() * 2500.3).abs().max() < 1e-9);
        assert_eq!(p.depth, 2.0);
        assert_eq!(p.mean2d, Vector2::new(100.0, 100.0));
    }

    #[test]
    fn zero_covariance_gives_floor() {
        let cam = axis_cam(100.0);
        let p = project_gaussian(&Vector3::new(0.3, -0.2, 3.0), &Matrix3::zeros(), &cam, DEFAULT_Z_NEAR).unwrap();
        assert_eq!(p.cov2d, Matrix2::identity() * COV2D_FLOOR);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = axis_cam(100.0);
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, -1.0), &Matrix3::identity(), &cam, DEFAULT_Z_NEAR).is_none());
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, 0.005), &Matrix3::identity(), &cam, DEFAULT_Z_NEAR).is_none());
    }

    /// Monte Carlo oracle: push samples of the 3D Gaussian through the exact
    /// perspective map and fit their 2D covariance.
    #[test]
    fn matches_sampled_projection_for_small_splats() {
        let cam = Camera::look_at(
            Vector3::new(0.5, -3.0, 1.0),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            200,
            200,
            0.9,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [
            (Vector3::new(0.0, 0.0, 0.0), Vector4::new(0.9, 0.1, -0.3, 0.2), Vector3::new(0.05, 0.02, 0.08)),
            (Vector3::new(0.4, 0.3, -0.2), Vector4::new(0.2, 0.7, 0.1, -0.4), Vector3::new(0.1, 0.03, 0.01)),
            (Vector3::new(-0.3, 0.2, 0.4), Vector4::new(1.0, 0.0, 0.0, 0.0), Vector3::new(0.06, 0.06, 0.06)),
        ];
        for (mean, q, s) in cases {
            let q = q.normalize();
            let cov = build_covariance(&q, &s).unwrap();
            let t = cam.to_camera(&mean);
            // subtended angle well under 10 degrees
            assert!((3.0 * s.max() / t.z).atan().to_degrees() < 10.0);
            let analytic = project_covariance_raw(&cov, &cam, &t);
            let l = cov.cholesky().unwrap().l();
            let n = 10_000;
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                let z = Vector3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                pts.push(cam.project(&(mean + l * z)).unwrap());
            }
            let m: Vector2<f64> = pts.iter().sum::<Vector2<f64>>() / n as f64;
            let mut fit = Matrix2::zeros();
            for p in &pts {
                let d = p - m;
                fit += d * d.transpose();
            }
            fit /= (n - 1) as f64;
            let rel = (fit - analytic).norm() / analytic.norm();
            assert!(rel < 0.05, "relative Frobenius error {rel}");
        }
    }
}
