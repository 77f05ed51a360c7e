use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use gsdf::dataio::{synth_scene, PrimitiveKind, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Args)]
pub struct SynthArgs {
    /// sphere, box, torus or union (sphere joined with a box).
    #[arg(long, default_value = "sphere")]
    primitive: String,
    /// Sphere radius.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    /// Box half-size.
    #[arg(long, default_value_t = 0.3)]
    half: f64,
    /// Torus major radius.
    #[arg(long, default_value_t = 0.5)]
    major: f64,
    /// Torus minor radius.
    #[arg(long, default_value_t = 0.2)]
    minor: f64,
    /// Training views.
    #[arg(long, default_value_t = 32)]
    views: usize,
    /// Held-out test views.
    #[arg(long, default_value_t = 8)]
    test_views: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    res: usize,
    /// Camera distance from the origin.
    #[arg(long, default_value_t = 3.2)]
    distance: f64,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 45.0)]
    fov: f64,
    /// Sparse depth points sampled per training view.
    #[arg(long, default_value_t = 200)]
    sparse_per_view: usize,
    /// Marching-cubes resolution of the ground-truth mesh.
    #[arg(long, default_value_t = 256)]
    gt_res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

pub fn run(a: SynthArgs) -> Result<()> {
    let primitive: PrimitiveKind = a.primitive.parse()?;
    let spec = SynthSpec {
        primitive,
        radius: a.radius,
        half: a.half,
        major: a.major,
        minor: a.minor,
        views: a.views,
        test_views: a.test_views,
        resolution: a.res,
        distance: a.distance,
        fov_x: a.fov.to_radians(),
        sparse_per_view: a.sparse_per_view,
        gt_resolution: a.gt_res,
        seed: a.seed,
    };
    crate::ensure_output_dir(&a.out, a.force)?;
    let scene = synth_scene(&spec, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    scene.write(&a.out)?;
    log::info!(
        "wrote {} training and {} test views to {}",
        scene.train.len(),
        scene.test.len(),
        a.out.display()
    );
    Ok(())
}
