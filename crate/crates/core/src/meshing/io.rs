//! Mesh files.
//!
//! OBJ is written as ASCII `v x y z`, `vn x y z` (one per vertex, when normals are
//! present) and `f a//a b//b c//c` lines with 1-based indices. The reader also
//! accepts `a`, `a/t` and `a/t/n` face tokens, negative indices and polygons, which
//! are fan-triangulated; other statements are skipped.
//!
//! PLY is written as binary little-endian with a `vertex` element holding float
//! `x y z` (plus `nx ny nz` when normals are present) and a `face` element holding
//! `property list uchar int vertex_indices`. Any PLY encoding is accepted on read.

use std::path::Path;

use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::ply::{self, Element, PlyFile, ScalarType};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::Ply),
            _ => Err(Error::usage(format!("{}: mesh files must end in .obj or .ply", path.display()))),
        }
    }
}

pub fn write_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    let bytes = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => to_obj(mesh).into_bytes(),
        MeshFormat::Ply => ply::to_bytes(&to_ply(mesh)),
    };
    write_atomic(path, &bytes)
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path)?;
    let mut mesh = match format {
        MeshFormat::Obj => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_obj(&text, path)?
        }
        MeshFormat::Ply => from_ply(&ply::read(path)?, path)?,
    };
    if mesh.vertex_normals.len() == mesh.vertices.len() {
        for n in &mut mesh.vertex_normals {
            *n = n.try_normalize(1e-300).unwrap_or_else(Vector3::z);
        }
    } else {
        mesh.compute_vertex_normals();
    }
    Ok(mesh)
}

fn f32s(v: &Vector3<f64>) -> String {
    format!("{} {} {}", v.x as f32, v.y as f32, v.z as f32)
}

pub fn to_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 24);
    for v in &mesh.vertices {
        s.push_str(&format!("v {}\n", f32s(v)));
    }
    let normals = mesh.vertex_normals.len() == mesh.vertices.len() && !mesh.vertices.is_empty();
    if normals {
        for n in &mesh.vertex_normals {
            s.push_str(&format!("vn {}\n", f32s(n)));
        }
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if normals {
            s.push_str(&format!("f {a}//{a} {b}//{b} {c}//{c}\n"));
        } else {
            s.push_str(&format!("f {a} {b} {c}\n"));
        }
    }
    s
}

fn obj_index(tok: &str, count: usize, line: usize, path: &Path) -> Result<u32> {
    let head = tok.split('/').next().unwrap_or("");
    let i: i64 = head
        .parse()
        .map_err(|_| Error::parse(path, format!("line {line}: bad face index `{tok}`")))?;
    let idx = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || idx < 0 || idx >= count as i64 {
        return Err(Error::parse(path, format!("line {line}: face index {i} out of range")));
    }
    Ok(idx as u32)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut toks = raw.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        match tag {
            "v" | "vn" => {
                let vals: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(path, format!("line {line}: bad number in `{raw}`")))?;
                if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(path, format!("line {line}: expected three finite numbers")));
                }
                let v = Vector3::new(vals[0], vals[1], vals[2]);
                if tag == "v" {
                    mesh.vertices.push(v);
                } else {
                    mesh.vertex_normals.push(v);
                }
            }
            "f" => {
                let idx: Vec<u32> = toks
                    .map(|t| obj_index(t, mesh.vertices.len(), line, path))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(path, format!("line {line}: face has fewer than three vertices")));
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

pub fn to_ply(mesh: &TriangleMesh) -> PlyFile {
    let n = mesh.vertices.len();
    let col = |src: &[Vector3<f64>], k: usize| src.iter().map(|v| v[k] as f32 as f64).collect::<Vec<_>>();
    let mut vertex = Element::new("vertex", n)
        .with_scalar("x", ScalarType::F32, col(&mesh.vertices, 0))
        .with_scalar("y", ScalarType::F32, col(&mesh.vertices, 1))
        .with_scalar("z", ScalarType::F32, col(&mesh.vertices, 2));
    if mesh.vertex_normals.len() == n && n > 0 {
        vertex = vertex
            .with_scalar("nx", ScalarType::F32, col(&mesh.vertex_normals, 0))
            .with_scalar("ny", ScalarType::F32, col(&mesh.vertex_normals, 1))
            .with_scalar("nz", ScalarType::F32, col(&mesh.vertex_normals, 2));
    }
    let faces = Element::new("face", mesh.faces.len()).with_list(
        "vertex_indices",
        ScalarType::U8,
        ScalarType::I32,
        mesh.faces.iter().map(|f| f.iter().map(|&i| i as f64).collect()).collect(),
    );
    PlyFile { encoding: ply::Encoding::BinaryLittleEndian, elements: vec![vertex, faces] }
}

pub fn from_ply(file: &PlyFile, path: &Path) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    let Some(v) = file.element("vertex") else {
        return Err(Error::parse(path, "no `vertex` element"));
    };
    let coord = |name: &str| v.scalar(name).ok_or_else(|| Error::parse(path, format!("vertex has no `{name}`")));
    let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
    mesh.vertices = (0..v.count).map(|i| Vector3::new(x[i], y[i], z[i])).collect();
    if let (Some(nx), Some(ny), Some(nz)) = (v.scalar("nx"), v.scalar("ny"), v.scalar("nz")) {
        mesh.vertex_normals = (0..v.count).map(|i| Vector3::new(nx[i], ny[i], nz[i])).collect();
    }
    if let Some(f) = file.element("face") {
        let lists = f
            .list("vertex_indices")
            .or_else(|| f.list("vertex_index"))
            .ok_or_else(|| Error::parse(path, "face element has no `vertex_indices` list"))?;
        for (row, l) in lists.iter().enumerate() {
            if l.len() < 3 {
                return Err(Error::parse(path, format!("face {row} has fewer than three vertices")));
            }
            let mut idx = Vec::with_capacity(l.len());
            for &i in l {
                if !(i >= 0.0 && (i as usize) < mesh.vertices.len()) {
                    return Err(Error::parse(path, format!("face {row} references vertex {i} out of range")));
                }
                idx.push(i as u32);
            }
            for k in 1..idx.len() - 1 {
                mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> TriangleMesh {
        let mut m = TriangleMesh {
            vertices: vec![
                Vector3::new(0.1, 0.2, 0.3),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0 / 3.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            faces: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
            vertex_normals: vec![],
        };
        m.compute_vertex_normals();
        m
    }

    fn assert_close(a: &TriangleMesh, b: &TriangleMesh) {
        assert_eq!(a.faces, b.faces);
        assert_eq!(a.vertices.len(), b.vertices.len());
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            assert!((p - q).amax() <= 1e-7 * p.amax().max(1.0), "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = tetra();
        assert_eq!(m.euler_characteristic(), 2);
        for name in ["t.obj", "t.ply", "T.PLY"] {
            let p = dir.path().join(name);
            write_mesh(&m, &p).unwrap();
            let r = read_mesh(&p).unwrap();
            assert_close(&m, &r);
            assert_eq!(r.vertex_normals.len(), 4);
        }
        for name in ["e.obj", "e.ply"] {
            let p = dir.path().join(name);
            write_mesh(&TriangleMesh::default(), &p).unwrap();
            let r = read_mesh(&p).unwrap();
            assert!(r.vertices.is_empty() && r.faces.is_empty());
        }
    }

    #[test]
    fn unknown_extension_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.stl");
        assert!(matches!(write_mesh(&tetra(), &p), Err(Error::Usage(_))));
        assert!(matches!(read_mesh(&p), Err(Error::Usage(_))));
    }

    #[test]
    fn obj_errors_name_the_line() {
        let p = Path::new("bad.obj");
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n", p).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
        let err = parse_obj("v 0 zero 0\n", p).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn obj_reader_accepts_common_variants() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 -2/1 4/1/1\ng x\n";
        let m = parse_obj(text, Path::new("q.obj")).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn ply_face_out_of_range_is_parse_error() {
        let mut m = tetra();
        m.faces.push([0, 1, 2]);
        let mut file = to_ply(&m);
        if let ply::Column::List { values, .. } = &mut file.elements[1].properties[0].column {
            values[4][2] = 9.0;
        }
        assert!(matches!(from_ply(&file, Path::new("x.ply")), Err(Error::Parse { .. })));
    }
}
