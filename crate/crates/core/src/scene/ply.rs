//! Gaussian sets in the conventional splatting PLY layout:
//! `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`, all float32.
//! `f_rest_*` is channel-major, so degree is recovered from its count.

use std::path::Path;

use nalgebra::{Vector3, Vector4};

use super::gaussians::{GaussianParams, GaussianSet};
use super::sh::sh_basis_count;
use crate::error::{Error, Result};
use crate::ply::{self, Element, Encoding, PlyFile, ScalarType};

pub fn gaussians_to_ply(g: &GaussianSet) -> PlyFile {
    let n = g.len();
    let rest = sh_basis_count(g.sh_degree()) - 1;
    let col = |f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<f64>>();
    let mut el = Element::new("vertex", n);
    for (a, name) in ["x", "y", "z"].iter().enumerate() {
        el = el.with_scalar(*name, ScalarType::F32, col(&|i| g.positions[i][a]));
    }
    for name in ["nx", "ny", "nz"] {
        el = el.with_scalar(name, ScalarType::F32, vec![0.0; n]);
    }
    for c in 0..3 {
        el = el.with_scalar(format!("f_dc_{c}"), ScalarType::F32, col(&|i| g.sh_coeffs(i)[c]));
    }
    for c in 0..3 {
        for k in 1..=rest {
            el = el.with_scalar(
                format!("f_rest_{}", c * rest + (k - 1)),
                ScalarType::F32,
                col(&|i| g.sh_coeffs(i)[k * 3 + c]),
            );
        }
    }
    el = el.with_scalar("opacity", ScalarType::F32, g.opacity_logits.clone());
    for a in 0..3 {
        el = el.with_scalar(format!("scale_{a}"), ScalarType::F32, col(&|i| g.log_scales[i][a]));
    }
    for a in 0..4 {
        el = el.with_scalar(format!("rot_{a}"), ScalarType::F32, col(&|i| g.rotations[i][a]));
    }
    PlyFile {
        encoding: Encoding::BinaryLittleEndian,
        elements: vec![el],
    }
}

pub fn gaussians_from_ply(file: &PlyFile, path: &Path) -> Result<GaussianSet> {
    let el = file
        .element("vertex")
        .ok_or_else(|| Error::parse(path, "no `vertex` element"))?;
    let get = |name: &str| el.scalar(name).ok_or_else(|| Error::parse(path, format!("missing property `{name}`")));
    let n_rest = el.properties.iter().filter(|p| p.name.starts_with("f_rest_")).count();
    let degree = match n_rest {
        0 => 0,
        9 => 1,
        24 => 2,
        45 => 3,
        k => return Err(Error::parse(path, format!("{k} f_rest properties do not match any SH degree"))),
    };
    let rest = n_rest / 3;
    let (x, y, z) = (get("x")?, get("y")?, get("z")?);
    let dc: Vec<&[f64]> = (0..3).map(|c| get(&format!("f_dc_{c}"))).collect::<Result<_>>()?;
    let fr: Vec<&[f64]> = (0..n_rest).map(|j| get(&format!("f_rest_{j}"))).collect::<Result<_>>()?;
    let op = get("opacity")?;
    let sc: Vec<&[f64]> = (0..3).map(|a| get(&format!("scale_{a}"))).collect::<Result<_>>()?;
    let rot: Vec<&[f64]> = (0..4).map(|a| get(&format!("rot_{a}"))).collect::<Result<_>>()?;
    let mut g = GaussianSet::new(degree);
    for i in 0..el.count {
        let mut sh = vec![0.0; (rest + 1) * 3];
        for c in 0..3 {
            sh[c] = dc[c][i];
            for k in 1..=rest {
                sh[k * 3 + c] = fr[c * rest + (k - 1)][i];
            }
        }
        g.push(GaussianParams {
            position: Vector3::new(x[i], y[i], z[i]),
            rotation: Vector4::new(rot[0][i], rot[1][i], rot[2][i], rot[3][i]),
            log_scale: Vector3::new(sc[0][i], sc[1][i], sc[2][i]),
            opacity_logit: op[i],
            sh,
        });
    }
    Ok(g)
}

pub fn write_gaussians(path: &Path, g: &GaussianSet) -> Result<()> {
    ply::write(path, &gaussians_to_ply(g))
}

pub fn read_gaussians(path: &Path) -> Result<GaussianSet> {
    gaussians_from_ply(&ply::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_within_f32(
            deg in 0usize..=3,
            vals in proptest::collection::vec(-3.0f64..3.0, 64),
        ) {
            let mut g = GaussianSet::new(deg);
            let stride = g.sh_stride();
            for j in 0..2 {
                let o = j * 14;
                g.push(GaussianParams {
                    position: Vector3::new(vals[o], vals[o + 1], vals[o + 2]),
                    rotation: Vector4::new(vals[o + 3], vals[o + 4], vals[o + 5], vals[o + 6]),
                    log_scale: Vector3::new(vals[o + 7], vals[o + 8], vals[o + 9]),
                    opacity_logit: vals[o + 10],
                    sh: (0..stride).map(|k| vals[(o + k) % 64]).collect(),
                });
            }
            let bytes = ply::to_bytes(&gaussians_to_ply(&g));
            let back = gaussians_from_ply(&ply::parse(std::io::Cursor::new(bytes), Path::new("m")).unwrap(), Path::new("m")).unwrap();
            prop_assert_eq!(back.sh_degree(), deg);
            prop_assert_eq!(back.len(), 2);
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + a.abs());
            for i in 0..2 {
                for a in 0..3 {
                    prop_assert!(close(back.positions[i][a], g.positions[i][a]));
                    prop_assert!(close(back.log_scales[i][a], g.log_scales[i][a]));
                }
                for a in 0..4 {
                    prop_assert!(close(back.rotations[i][a], g.rotations[i][a]));
                }
                prop_assert!(close(back.opacity_logits[i], g.opacity_logits[i]));
                for (x, y) in back.sh_coeffs(i).iter().zip(g.sh_coeffs(i)) {
                    prop_assert!(close(*x, *y));
                }
            }
        }
    }
}
