//! Rotation/scale parameterization of 3D Gaussian covariances.

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};

/// Symmetric positive semi-definite 3x3 covariance, scene units squared.
pub type Covariance3 = Matrix3<f64>;

/// Tolerance on `|q| - 1` accepted by operations that require a unit quaternion.
pub const UNIT_QUAT_TOL: f64 = 1e-6;

/// Two scales closer than this are treated as tied when picking the shortest axis.
pub const AXIS_TIE_TOL: f64 = 1e-9;

/// Rotation matrix of a unit quaternion stored as `(w, x, y, z)`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient w.r.t. the (unit) quaternion components given `dL/dR`.
pub fn quat_to_rotation_backward(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    Vector4::new(dw, dx, dy, dz)
}

/// Normalize a raw quaternion. Zero-norm input is a domain error.
pub fn normalize_quat(q: &Vector4<f64>) -> Result<Vector4<f64>> {
    let n = q.norm();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::Domain(format!("quaternion {:?} cannot be normalized", q.as_slice())));
    }
    Ok(q / n)
}

/// Chain `dL/dq_hat` back through `q_hat = q / |q|`.
pub fn normalize_quat_backward(q_raw: &Vector4<f64>, d_unit: &Vector4<f64>) -> Vector4<f64> {
    let n = q_raw.norm();
    let u = q_raw / n;
    (d_unit - u * u.dot(d_unit)) / n
}

fn check_inputs(q: &Vector4<f64>, scale: &Vector3<f64>) -> Result<()> {
    if (q.norm() - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(Error::Domain(format!("quaternion norm {} is not 1", q.norm())));
    }
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain(format!("scale {:?} must be positive", scale.as_slice())));
    }
    Ok(())
}

/// `R S S^T R^T` for a unit quaternion and positive per-axis scales.
pub fn build_covariance(q: &Vector4<f64>, scale: &Vector3<f64>) -> Result<Covariance3> {
    check_inputs(q, scale)?;
    Ok(covariance_unchecked(q, scale))
}

pub(crate) fn covariance_unchecked(q: &Vector4<f64>, scale: &Vector3<f64>) -> Covariance3 {
    let m = quat_to_rotation(q) * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// Backpropagate `dL/dΣ` (any 3x3, not necessarily symmetric) to the unit quaternion and scales.
pub fn build_covariance_backward(
    q: &Vector4<f64>,
    scale: &Vector3<f64>,
    d_cov: &Matrix3<f64>,
) -> (Vector4<f64>, Vector3<f64>) {
    let r = quat_to_rotation(q);
    let m = r * Matrix3::from_diagonal(scale);
    let d_m = (d_cov + d_cov.transpose()) * m;
    let mut d_r = d_m;
    let mut d_s = Vector3::zeros();
    for k in 0..3 {
        d_s[k] = r.column(k).dot(&d_m.column(k));
        d_r.column_mut(k).scale_mut(scale[k]);
    }
    (quat_to_rotation_backward(q, &d_r), d_s)
}

/// Index of the smallest scale; ties (within [`AXIS_TIE_TOL`]) go to the lower index.
pub fn shortest_axis_index(scale: &Vector3<f64>) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if scale[k] < scale[best] - AXIS_TIE_TOL {
            best = k;
        }
    }
    best
}

/// Unit direction of the Gaussian's shortest axis, i.e. its local surface normal.
pub fn shortest_axis_normal(q: &Vector4<f64>, scale: &Vector3<f64>) -> Result<Vector3<f64>> {
    check_inputs(q, scale)?;
    let k = shortest_axis_index(scale);
    Ok(quat_to_rotation(q).column(k).into_owned())
}

/// Gradient w.r.t. the unit quaternion of `n = R[:, axis]` given `dL/dn`.
pub fn shortest_axis_normal_backward(q: &Vector4<f64>, axis: usize, d_n: &Vector3<f64>) -> Vector4<f64> {
    let mut g = Matrix3::zeros();
    g.column_mut(axis).copy_from(d_n);
    quat_to_rotation_backward(q, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn rand_quat(a: f64, b: f64, c: f64, d: f64) -> Vector4<f64> {
        Vector4::new(a, b, c, d).normalize()
    }

    fn quat_mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
        let (aw, ax, ay, az) = (a[0], a[1], a[2], a[3]);
        let (bw, bx, by, bz) = (b[0], b[1], b[2], b[3]);
        Vector4::new(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn axis_aligned_examples() {
        let id = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let c = build_covariance(&id, &Vector3::new(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(c, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)));
        let c = build_covariance(&id, &Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(c, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let q = Vector4::new(H, 0.0, 0.0, H);
        let c = build_covariance(&q, &Vector3::new(2.0, 1.0, 1.0)).unwrap();
        let want = Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0));
        assert!((c - want).abs().max() < 1e-12);
        let n = shortest_axis_normal(&q, &Vector3::new(0.1, 1.0, 1.0)).unwrap();
        assert!((n.abs() - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn shortest_axis_examples_and_ties() {
        let id = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let n = shortest_axis_normal(&id, &Vector3::new(0.1, 1.0, 1.0)).unwrap();
        assert_eq!(n.abs(), Vector3::new(1.0, 0.0, 0.0));
        let n = shortest_axis_normal(&id, &Vector3::new(1.0, 1.0, 0.1)).unwrap();
        assert_eq!(n.abs(), Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(shortest_axis_index(&Vector3::new(0.5, 0.5, 0.5)), 0);
        assert_eq!(shortest_axis_index(&Vector3::new(1.0, 0.5, 0.5 + 1e-12)), 1);
    }

    #[test]
    fn rejects_non_unit_quaternion_and_bad_scale() {
        assert!(build_covariance(&Vector4::new(2.0, 0.0, 0.0, 0.0), &Vector3::repeat(1.0)).is_err());
        assert!(build_covariance(&Vector4::new(1.0, 0.0, 0.0, 0.0), &Vector3::new(1.0, 0.0, 1.0)).is_err());
        assert!(normalize_quat(&Vector4::zeros()).is_err());
        assert_eq!(normalize_quat(&Vector4::new(2.0, 0.0, 0.0, 0.0)).unwrap(), Vector4::new(1.0, 0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn rotation_equivariance(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in 0.1f64..1.0,
            e in -1.0f64..1.0, f in -1.0f64..1.0, g in -1.0f64..1.0, h in 0.1f64..1.0,
            s0 in 0.01f64..2.0, s1 in 0.01f64..2.0, s2 in 0.01f64..2.0,
        ) {
            let q = rand_quat(d, a, b, c);
            let q0 = rand_quat(h, e, f, g);
            let s = Vector3::new(s0, s1, s2);
            let lhs = build_covariance(&quat_mul(&q, &q0).normalize(), &s).unwrap();
            let r = quat_to_rotation(&q);
            let rhs = r * build_covariance(&q0, &s).unwrap() * r.transpose();
            prop_assert!((lhs - rhs).abs().max() < 1e-6);
        }

        #[test]
        fn shortest_axis_is_min_eigenvector(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in 0.1f64..1.0,
            s0 in 0.01f64..2.0, s1 in 0.01f64..2.0, s2 in 0.01f64..2.0,
        ) {
            let q = rand_quat(d, a, b, c);
            let s = Vector3::new(s0, s1, s2);
            let cov = build_covariance(&q, &s).unwrap();
            let n = shortest_axis_normal(&q, &s).unwrap();
            let eig = SymmetricEigen::new(cov);
            let lmin = eig.eigenvalues.min();
            prop_assert!((cov * n - n * lmin).norm() < 1e-6);
            prop_assert!((n.norm() - 1.0).abs() < 1e-12);
            // eigenvalues are the squared scales
            let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let mut sq: Vec<f64> = s.iter().map(|x| x * x).collect();
            ev.sort_by(f64::total_cmp);
            sq.sort_by(f64::total_cmp);
            for (x, y) in ev.iter().zip(&sq) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
