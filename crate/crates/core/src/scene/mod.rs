//! Gaussian scene model, cameras and the differentiable projection chain.

pub mod aabb;
pub mod camera;
pub mod covariance;
pub mod gaussians;
pub mod ply;
pub mod projection;
pub mod sh;

pub use aabb::Aabb;
pub use camera::Camera;
pub use covariance::{build_covariance, shortest_axis_normal, Covariance3};
pub use gaussians::{activate, sigmoid, ActivatedGaussians, GaussianGrads, GaussianParams, GaussianSet};
pub use projection::{project_gaussian, Projected, COV2D_FLOOR, DEFAULT_Z_NEAR};
pub use sh::sh_to_color;
