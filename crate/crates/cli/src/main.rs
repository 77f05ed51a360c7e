//! `gsdf`: synthesize scenes, train, render, extract meshes and evaluate.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod eval;
mod mesh;
mod render;
mod synth;
mod train;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gsdf", version, about = "Joint Gaussian splatting and neural SDF surface reconstruction on the CPU")]
struct Cli {
    /// Worker threads for parallel sections (1 gives bit-reproducible runs).
    #[arg(long, global = true, env = "GSDF_WORKERS")]
    workers: Option<usize>,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an analytic scene into a NeRF-synthetic style dataset.
    Synth(synth::SynthArgs),
    /// Train Gaussians and the SDF field on a dataset.
    Train(train::TrainArgs),
    /// Render views from a checkpoint.
    Render(render::RenderArgs),
    /// Extract the SDF zero level set with marching cubes.
    Mesh(mesh::MeshArgs),
    /// Image and geometry metrics for a checkpoint.
    Eval(eval::EvalArgs),
}

/// Fail unless `dir` is missing or empty, or `force` is set.
pub(crate) fn ensure_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!(gsdf::Error::usage(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            bail!(gsdf::Error::usage(format!("{} is not empty (pass --force to write into it)", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| gsdf::Error::io(dir, e))?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gsdf::Error>() {
        Some(gsdf::Error::NonFiniteLoss { .. } | gsdf::Error::NonFinite { .. } | gsdf::Error::Init(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        gsdf::par::set_worker_count(n);
    }
    let result = match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Render(a) => render::run(a),
        Command::Mesh(a) => mesh::run(a),
        Command::Eval(a) => eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
