use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use gsdf::dataio::{load_nerf_synthetic, load_sfm_points, LoadOptions};
use gsdf::meshing::{extraction_bounds, marching_cubes, read_mesh, sample_surface};
use gsdf::metrics::{chamfer_l1, default_tau, f_score, psnr, ssim, EvalReport, ViewMetrics};
use gsdf::rasterizer::render;
use gsdf::trainer::Trainer;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory; `gt_mesh.ply` there is used for geometry unless --gt is given.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Reference geometry: a mesh (.obj or .ply with faces) or a PLY point cloud.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Marching-cubes resolution for the predicted surface.
    #[arg(long, default_value_t = 256)]
    mesh_res: usize,
    /// Surface samples per mesh for Chamfer and F-score.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// F-score threshold [default: 1% of the reference bounding-box diagonal].
    #[arg(long)]
    tau: Option<f64>,
    /// Skip image metrics.
    #[arg(long)]
    no_images: bool,
    /// Directory for metrics.json and metrics.csv [default: the checkpoint].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn reference_points(path: &PathBuf, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vector3<f64>>> {
    match read_mesh(path) {
        Ok(m) if !m.faces.is_empty() => Ok(sample_surface(&m, n, rng)?),
        _ => Ok(load_sfm_points(path)?.points),
    }
}

pub fn run(a: EvalArgs) -> Result<()> {
    let trainer = Trainer::load(&a.ckpt).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    let bg = trainer.background;
    let data = load_nerf_synthetic(&a.data, &a.split, &LoadOptions { background: Some([bg.x, bg.y, bg.z]), downscale: 1 })?;
    let mut report = EvalReport { gaussians: Some(trainer.gaussians.len()), ..Default::default() };

    if !a.no_images {
        let opacity = trainer.opacity_override();
        let ropts = trainer.render_options(opacity.as_deref());
        for (i, (cam, gt)) in data.cameras.iter().zip(&data.images).enumerate() {
            let color = render(&trainer.gaussians, cam, &ropts)?.color.clamped01();
            report.views.push(ViewMetrics { view: i, psnr: psnr(&color, gt)?, ssim: ssim(&color, gt)? });
        }
        report.summarize_views();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let reference = match &a.gt {
        Some(p) => Some(reference_points(p, a.samples, &mut rng)?),
        None => match &data.gt_mesh {
            Some(m) => Some(sample_surface(m, a.samples, &mut rng)?),
            None => None,
        },
    };
    match reference {
        Some(gt) => {
            let mesh = marching_cubes(&trainer.field, a.mesh_res, &extraction_bounds(&trainer.bounds()))?;
            if mesh.is_empty() {
                log::warn!("predicted surface is empty; geometry metrics skipped");
            } else {
                let pred = sample_surface(&mesh, a.samples, &mut rng)?;
                let tau = match a.tau {
                    Some(t) => t,
                    None => default_tau(&gt)?,
                };
                report.chamfer_l1 = Some(chamfer_l1(&pred, &gt)?);
                report.f_score = Some(f_score(&pred, &gt, tau)?);
            }
        }
        None => log::warn!("no reference geometry found; pass --gt for Chamfer and F-score"),
    }

    let out = a.out.unwrap_or(a.ckpt);
    std::fs::create_dir_all(&out).map_err(|e| gsdf::Error::io(&out, e))?;
    report.write(&out, "metrics")?;
    print!("{}", report.to_csv().lines().take_while(|l| !l.starts_with("psnr_view")).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
