use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use gsdf::meshing::{extraction_bounds, marching_cubes, write_mesh, MeshFormat};
use gsdf::sdf_field::io::read_field;

#[derive(Args)]
pub struct MeshArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Grid cells per axis.
    #[arg(long, default_value_t = 256)]
    res: usize,
    /// Output mesh, `.obj` or `.ply`.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing file.
    #[arg(long)]
    force: bool,
}

pub fn run(a: MeshArgs) -> Result<()> {
    MeshFormat::from_path(&a.out)?;
    if a.out.exists() && !a.force {
        anyhow::bail!(gsdf::Error::usage(format!("{} exists (pass --force to overwrite)", a.out.display())));
    }
    let field = read_field(&a.ckpt.join("field.bin")).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    let mesh = marching_cubes(&field, a.res, &extraction_bounds(&field.bounds()))?;
    if mesh.is_empty() {
        log::warn!("the zero level set is empty inside the field bounds");
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| gsdf::Error::io(dir, e))?;
    }
    write_mesh(&mesh, &a.out)?;
    println!(
        "{} vertices, {} faces, area {:.4}, closed {}",
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.area(),
        mesh.is_closed()
    );
    Ok(())
}
