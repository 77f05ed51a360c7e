use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use gsdf::coupling::CouplingMode;
use gsdf::dataio::{load_nerf_synthetic, LoadOptions};
use gsdf::fsutil::write_atomic;
use gsdf::trainer::{TrainConfig, Trainer};
use serde::Serialize;

/// Flags override the config file, which overrides the built-in defaults.
#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (NeRF-synthetic layout).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Config file, JSON or TOML (by extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from the checkpoint in --out; --iters then sets the new total.
    #[arg(long)]
    resume: bool,
    /// Total iterations [default: 5000].
    #[arg(long)]
    iters: Option<usize>,
    /// Warm-up steps with only the photometric and sparse-depth terms [default: 500].
    #[arg(long)]
    warmup: Option<usize>,
    /// tight, loose or none [default: loose].
    #[arg(long)]
    coupling: Option<CouplingMode>,
    /// D-SSIM share of the photometric loss [default: 0.2].
    #[arg(long)]
    lambda_dssim: Option<f64>,
    /// Volumetric depth weight [default: 1.0].
    #[arg(long)]
    alpha_depth: Option<f64>,
    /// Volumetric normal weight [default: 0.1].
    #[arg(long)]
    alpha_normal: Option<f64>,
    /// Alignment plus projection-distance weight [default: 0.0001].
    #[arg(long)]
    alpha_align: Option<f64>,
    /// Eikonal weight [default: 0.1].
    #[arg(long)]
    alpha_eikonal: Option<f64>,
    /// Sparse depth weight [default: 0.1].
    #[arg(long)]
    alpha_sfm: Option<f64>,
    /// Opacity multiplier on Phi_beta(f) under tight coupling [default: 1.0].
    #[arg(long)]
    opacity_scale: Option<f64>,
    /// Rays per step [default: 256].
    #[arg(long)]
    rays: Option<usize>,
    /// Samples per ray [default: 32].
    #[arg(long)]
    samples: Option<usize>,
    /// Draw rays from the whole image instead of the foreground masks.
    #[arg(long)]
    no_masks: bool,
    /// Ignore sparse depth points.
    #[arg(long)]
    no_sparse_depth: bool,
    /// Drop the volumetric depth and normal terms.
    #[arg(long)]
    no_volumetric: bool,
    /// Train the field with the Eikonal term during warm-up.
    #[arg(long)]
    eikonal_in_warmup: bool,
    /// Turn off densification and pruning.
    #[arg(long)]
    no_densify: bool,
    /// Integer image downscale factor applied at load time.
    #[arg(long, default_value_t = 1)]
    downscale: usize,
    /// Save a checkpoint every N iterations (0: only at the end).
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: usize,
    /// Log every N iterations.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl TrainArgs {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(self.iters, c.iterations);
        set!(self.warmup, c.warmup_steps);
        set!(self.coupling, c.coupling);
        set!(self.lambda_dssim, c.lambda_dssim);
        set!(self.alpha_depth, c.weights.depth);
        set!(self.alpha_normal, c.weights.normal);
        set!(self.alpha_align, c.weights.align);
        set!(self.alpha_eikonal, c.weights.eikonal);
        set!(self.alpha_sfm, c.weights.sfm);
        set!(self.opacity_scale, c.opacity_scale);
        set!(self.rays, c.rays_per_step);
        set!(self.samples, c.samples_per_ray);
        set!(self.seed, c.seed);
        c.use_masks &= !self.no_masks;
        c.use_sparse_depth &= !self.no_sparse_depth;
        c.disable_volumetric |= self.no_volumetric;
        c.eikonal_in_warmup |= self.eikonal_in_warmup;
        c.densify.enabled &= !self.no_densify;
    }
}

/// Summary written next to the checkpoint as `train_report.json`.
#[derive(Serialize)]
struct TrainReport {
    iterations: usize,
    coupling: CouplingMode,
    /// `coupled` when opacities come from the field, `free` otherwise.
    opacity_path: &'static str,
    gaussians: usize,
    final_total: f64,
    final_photometric: f64,
    beta: f64,
    s: f64,
    seconds: f64,
}

pub fn run(a: TrainArgs) -> Result<()> {
    let mut trainer = if a.resume {
        let mut t = Trainer::load(&a.out).with_context(|| format!("loading checkpoint {}", a.out.display()))?;
        if let Some(n) = a.iters {
            t.config.iterations = n;
            t.config.validate()?;
        }
        t
    } else {
        let mut cfg = match &a.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::default(),
        };
        a.apply(&mut cfg);
        cfg.validate()?;
        crate::ensure_output_dir(&a.out, a.force)?;
        let opts = LoadOptions { background: cfg.background, downscale: a.downscale };
        let data = load_nerf_synthetic(&a.data, "train", &opts)?;
        Trainer::new(cfg, &data)?
    };
    let opts = LoadOptions { background: Some([trainer.background.x, trainer.background.y, trainer.background.z]), downscale: a.downscale };
    let data = load_nerf_synthetic(&a.data, "train", &opts)?;
    if data.is_empty() {
        bail!(gsdf::Error::usage("training split is empty"));
    }
    log::info!(
        "training {} gaussians on {} views, {} -> {} iterations, coupling {}",
        trainer.gaussians.len(),
        data.len(),
        trainer.iteration,
        trainer.config.iterations,
        trainer.config.coupling
    );
    let start = Instant::now();
    let mut last = None;
    let out = a.out.clone();
    let result = trainer.run(&data, |t, r| {
        if a.log_every > 0 && (r.iteration % a.log_every == 0 || t.is_finished()) {
            log::info!(
                "it {:>6}  loss {:.5}  photo {:.5}  depth {:.5}  normal {:.4}  eik {:.4}  gaussians {}",
                r.iteration,
                r.total,
                r.photometric,
                r.depth,
                r.normal,
                r.eikonal,
                r.gaussians
            );
        }
        if a.checkpoint_every > 0 && t.iteration % a.checkpoint_every == 0 && !t.is_finished() {
            t.save(&out)?;
        }
        last = Some(r.clone());
        Ok(())
    });
    if let Err(e) = result {
        // Keep the last good state for inspection.
        trainer.save(&a.out)?;
        return Err(e.into());
    }
    trainer.save(&a.out)?;
    let last = last.unwrap_or_default();
    let report = TrainReport {
        iterations: trainer.iteration,
        coupling: trainer.config.coupling,
        opacity_path: if trainer.config.coupling == CouplingMode::Tight { "coupled" } else { "free" },
        gaussians: trainer.gaussians.len(),
        final_total: last.total,
        final_photometric: last.photometric,
        beta: trainer.field.beta(),
        s: trainer.field.s(),
        seconds: start.elapsed().as_secs_f64(),
    };
    write_atomic(&a.out.join("train_report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    log::info!("done in {:.1}s, checkpoint in {}", report.seconds, a.out.display());
    Ok(())
}
