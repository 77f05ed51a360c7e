use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use gsdf::dataio::{load_nerf_synthetic, LoadOptions};
use gsdf::image::{write_npy, write_png};
use gsdf::metrics::psnr;
use gsdf::rasterizer::render;
use gsdf::trainer::Trainer;

#[derive(Args)]
pub struct RenderArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory providing the cameras.
    #[arg(long)]
    data: PathBuf,
    /// train or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output directory for PNG renders.
    #[arg(long)]
    out: PathBuf,
    /// Also write alpha-normalized depth as `<name>_depth.npy`.
    #[arg(long)]
    depth: bool,
    /// Also write world-space pseudo-normals as `<name>_normal.npy`.
    #[arg(long)]
    normals: bool,
    #[arg(long, default_value_t = 1)]
    downscale: usize,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn stem(name: &str, i: usize) -> String {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .unwrap_or_else(|| format!("view_{i:03}"))
}

pub fn run(a: RenderArgs) -> Result<()> {
    let trainer = Trainer::load(&a.ckpt).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    let bg = trainer.background;
    let opts = LoadOptions { background: Some([bg.x, bg.y, bg.z]), downscale: a.downscale };
    let data = load_nerf_synthetic(&a.data, &a.split, &opts)?;
    crate::ensure_output_dir(&a.out, a.force)?;
    let opacity = trainer.opacity_override();
    let ropts = trainer.render_options(opacity.as_deref());
    let mut total = 0.0;
    for (i, (cam, gt)) in data.cameras.iter().zip(&data.images).enumerate() {
        let out = render(&trainer.gaussians, cam, &ropts)?;
        let color = out.color.clamped01();
        let name = stem(&data.names[i], i);
        write_png(&a.out.join(format!("{name}.png")), &color)?;
        if a.depth {
            let d = gsdf::rasterizer::normalized_depth(&out.depth, &out.alpha);
            write_npy(&a.out.join(format!("{name}_depth.npy")), &d)?;
        }
        if a.normals {
            let mut n = out.pseudo_normal.clone();
            let rt = cam.rotation.transpose();
            for px in n.data.chunks_exact_mut(3) {
                let w = rt * nalgebra::Vector3::new(px[0], px[1], px[2]);
                px.copy_from_slice(w.as_slice());
            }
            write_npy(&a.out.join(format!("{name}_normal.npy")), &n)?;
        }
        let p = psnr(&color, gt)?;
        total += p;
        println!("{name}\tpsnr {p:.3}");
    }
    println!("mean psnr {:.3} over {} views", total / data.len() as f64, data.len());
    Ok(())
}
