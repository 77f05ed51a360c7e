//! Joint 3D Gaussian splatting and neural signed distance field reconstruction.

pub mod coupling;
pub mod dataio;
pub mod error;
pub mod fsutil;
pub mod image;
pub mod meshing;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod ply;
pub mod rasterizer;
pub mod scene;
pub mod sdf_field;
pub mod ssim;
pub mod trainer;
pub mod volumetric;

pub use error::{Error, Result};
