//! Exact signed distance functions of simple primitives.

use nalgebra::{Matrix3, Vector3};

use super::SignedDistance;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereSdf {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl SphereSdf {
    pub fn new(center: Vector3<f64>, radius: f64) -> Self {
        Self { center, radius }
    }
}

impl SignedDistance for SphereSdf {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        (x - self.center).norm() - self.radius
    }

    fn value_and_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let p = x - self.center;
        let r = p.norm();
        let g = if r > 0.0 { p / r } else { Vector3::zeros() };
        (r - self.radius, g)
    }

    fn position_backward(&self, x: &Vector3<f64>, df: f64, u: &Vector3<f64>) -> Vector3<f64> {
        let p = x - self.center;
        let r = p.norm();
        if r == 0.0 {
            return Vector3::zeros();
        }
        let n = p / r;
        let hess = (Matrix3::identity() - n * n.transpose()) / r;
        n * df + hess * u
    }
}

/// Axis-aligned box with half-extents `half`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxSdf {
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
}

impl BoxSdf {
    pub fn new(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Self { center, half }
    }
}

impl SignedDistance for BoxSdf {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.value_and_grad(x).0
    }

    fn value_and_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let p = x - self.center;
        let q = p.abs() - self.half;
        let outside = q.map(|v| v.max(0.0));
        let len = outside.norm();
        if len > 0.0 {
            let g = Vector3::from_fn(|k, _| outside[k] / len * p[k].signum());
            (len, g)
        } else {
            let k = q.imax();
            (q[k], Vector3::ith(k, p[k].signum()))
        }
    }
}

/// Torus around the y axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusSdf {
    pub center: Vector3<f64>,
    pub major: f64,
    pub minor: f64,
}

impl TorusSdf {
    pub fn new(center: Vector3<f64>, major: f64, minor: f64) -> Self {
        Self { center, major, minor }
    }
}

impl SignedDistance for TorusSdf {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.value_and_grad(x).0
    }

    fn value_and_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let p = x - self.center;
        let rxz = p.x.hypot(p.z);
        let qx = rxz - self.major;
        let ql = qx.hypot(p.y);
        let f = ql - self.minor;
        if ql == 0.0 {
            return (f, Vector3::zeros());
        }
        let (cx, cz) = if rxz > 0.0 { (p.x / rxz, p.z / rxz) } else { (0.0, 0.0) };
        (f, Vector3::new(qx / ql * cx, p.y / ql, qx / ql * cz))
    }
}

/// Pointwise minimum of several distance functions.
pub struct UnionSdf {
    pub parts: Vec<Box<dyn SignedDistance>>,
}

impl UnionSdf {
    pub fn new(parts: Vec<Box<dyn SignedDistance>>) -> Self {
        Self { parts }
    }

    fn closest(&self, x: &Vector3<f64>) -> Option<&dyn SignedDistance> {
        self.parts
            .iter()
            .map(|p| (p.value(x), p))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p.as_ref())
    }
}

impl SignedDistance for UnionSdf {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.parts.iter().map(|p| p.value(x)).fold(f64::INFINITY, f64::min)
    }

    fn value_and_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        self.closest(x).map_or((f64::INFINITY, Vector3::zeros()), |p| p.value_and_grad(x))
    }

    fn position_backward(&self, x: &Vector3<f64>, df: f64, u: &Vector3<f64>) -> Vector3<f64> {
        self.closest(x).map_or(Vector3::zeros(), |p| p.position_backward(x, df, u))
    }
}
