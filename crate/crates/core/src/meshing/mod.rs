//! Marching-cubes extraction of an SDF zero level set, surface sampling and mesh files.

pub mod io;
mod tables;

pub use io::{read_mesh, write_mesh, MeshFormat};

use std::collections::{HashMap, HashSet};

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::scene::Aabb;
use crate::sdf_field::SignedDistance;
use tables::{CORNERS, EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};

/// Default grid resolution for extraction.
pub const DEFAULT_RESOLUTION: usize = 256;

/// Extraction box shrink factor applied to the field bounds, keeping faces off the border.
pub const BOUNDS_SHRINK: f64 = 0.98;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Counter-clockwise seen from outside.
    pub faces: Vec<[u32; 3]>,
    pub vertex_normals: Vec<Vector3<f64>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if !self.vertex_normals.is_empty() && self.vertex_normals.len() != n {
            return Err(Error::usage("vertex normal count differs from vertex count"));
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::usage(format!("vertex {i} is not finite")));
        }
        if let Some(f) = self.faces.iter().position(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::usage(format!("face {f} references a missing vertex")));
        }
        Ok(())
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| 0.5 * self.face_cross(f).norm()).sum()
    }

    /// Area-weighted average of incident face normals.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for f in 0..self.faces.len() {
            let n = self.face_cross(f);
            for &i in &self.faces[f] {
                acc[i as usize] += n;
            }
        }
        self.vertex_normals = acc.into_iter().map(|n| n.try_normalize(1e-300).unwrap_or_else(Vector3::z)).collect();
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = HashSet::with_capacity(self.faces.len() * 2);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// `V - E + F`, counting only vertices referenced by a face.
    pub fn euler_characteristic(&self) -> i64 {
        let used: HashSet<u32> = self.faces.iter().flatten().copied().collect();
        used.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// True when every undirected edge borders exactly two faces.
    pub fn is_closed(&self) -> bool {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().all(|&c| c == 2)
    }
}

/// Field bounds shrunk by [`BOUNDS_SHRINK`].
pub fn extraction_bounds(field_bounds: &Aabb) -> Aabb {
    field_bounds.scaled(BOUNDS_SHRINK)
}

struct Grid {
    n: usize,
    origin: Vector3<f64>,
    step: Vector3<f64>,
    values: Vec<f64>,
}

impl Grid {
    fn side(&self) -> usize {
        self.n + 1
    }

    fn lin(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.side() + j) * self.side() + i
    }

    fn point(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + self.step.component_mul(&Vector3::new(i as f64, j as f64, k as f64))
    }

    fn unlin(&self, l: usize) -> [usize; 3] {
        let s = self.side();
        [l % s, (l / s) % s, l / (s * s)]
    }

    fn edge_key(&self, cell: [usize; 3], edge: usize) -> u64 {
        let [c0, c1] = EDGE_CORNERS[edge];
        let (a, b) = (CORNERS[c0], CORNERS[c1]);
        let axis = (0..3).find(|&k| a[k] != b[k]).unwrap();
        let s = [0, 1, 2].map(|k| cell[k] + a[k].min(b[k]));
        (self.lin(s[0], s[1], s[2]) * 3 + axis) as u64
    }

    fn edge_vertex(&self, key: u64) -> Vector3<f64> {
        let axis = (key % 3) as usize;
        let l = (key / 3) as usize;
        let [i, j, k] = self.unlin(l);
        let mut e = [i, j, k];
        e[axis] += 1;
        let (v0, v1) = (self.values[l], self.values[self.lin(e[0], e[1], e[2])]);
        let t = (v0 / (v0 - v1)).clamp(0.0, 1.0);
        let mut p = self.point(i, j, k);
        p[axis] += t * self.step[axis];
        p
    }
}

/// Polygonize `{x : f(x) = 0}` on a grid of `resolution` cells per axis spanning `bounds`.
///
/// Cells with a corner value below zero count as inside. Vertex normals follow the
/// normalized field gradient. A field with no sign change yields an empty mesh and a
/// logged warning.
pub fn marching_cubes<F: SignedDistance + ?Sized>(field: &F, resolution: usize, bounds: &Aabb) -> Result<TriangleMesh> {
    if resolution < 8 {
        return Err(Error::usage(format!("marching cubes resolution {resolution} is below 8")));
    }
    if !bounds.is_valid() {
        return Err(Error::usage("marching cubes bounds are degenerate"));
    }
    let n = resolution;
    let side = n + 1;
    let step = bounds.extent() / n as f64;
    let mut grid = Grid { n, origin: bounds.min, step, values: Vec::new() };
    let slabs = par::map_chunks(side, 1, |r| {
        let k = r.start;
        let mut out = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                out.push(field.value(&grid.point(i, j, k)));
            }
        }
        out
    });
    grid.values = slabs.concat();
    if let Some(l) = grid.values.iter().position(|v| !v.is_finite()) {
        let [i, j, k] = grid.unlin(l);
        return Err(Error::Domain(format!("field is not finite at grid point ({i}, {j}, {k})")));
    }

    let grid_ref = &grid;
    let tris: Vec<Vec<[u64; 3]>> = par::map_chunks(n, 1, |r| {
        let k = r.start;
        let mut out = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let mut case = 0usize;
                for (c, o) in CORNERS.iter().enumerate() {
                    if grid_ref.values[grid_ref.lin(i + o[0], j + o[1], k + o[2])] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                for t in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let key = |e: i8| grid_ref.edge_key([i, j, k], e as usize);
                    // the table winds clockwise seen from the outside
                    out.push([key(t[0]), key(t[2]), key(t[1])]);
                }
            }
        }
        out
    });

    let mut ids: HashMap<u64, u32> = HashMap::new();
    let mut keys = Vec::new();
    let mut faces = Vec::new();
    for t in tris.into_iter().flatten() {
        let f = t.map(|key| {
            *ids.entry(key).or_insert_with(|| {
                keys.push(key);
                (keys.len() - 1) as u32
            })
        });
        faces.push(f);
    }
    let vertices = par::map_indices(keys.len(), |v| grid.edge_vertex(keys[v]));
    let grads = par::map_indices(vertices.len(), |v| field.value_and_grad(&vertices[v]).1);
    let mut mesh = TriangleMesh { vertices, faces, vertex_normals: Vec::new() };
    if mesh.is_empty() {
        log::warn!("marching cubes found no sign change of the field inside the bounds");
        return Ok(mesh);
    }
    mesh.compute_vertex_normals();
    for (n, g) in mesh.vertex_normals.iter_mut().zip(&grads) {
        if let Some(u) = g.try_normalize(1e-12) {
            *n = u;
        }
    }
    Ok(mesh)
}

/// `n` points drawn uniformly by area from the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<Vec<Vector3<f64>>> {
    Ok(sample_surface_with_faces(mesh, n, rng)?.into_iter().map(|(p, _)| p).collect())
}

/// Like [`sample_surface`], also returning the face each point was drawn from.
pub fn sample_surface_with_faces(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<Vec<(Vector3<f64>, usize)>> {
    if mesh.is_empty() {
        return Err(Error::usage("cannot sample an empty mesh"));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_cross(f).norm();
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::usage("cannot sample a mesh with zero area"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i as usize]);
        out.push(((1.0 - s) * a + s * (1.0 - r2) * b + s * r2 * c, f));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf_field::{BoxSdf, SphereSdf, TorusSdf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere_mesh(res: usize) -> TriangleMesh {
        marching_cubes(&SphereSdf::new(Vector3::zeros(), 0.5), res, &Aabb::cube(1.0)).unwrap()
    }

    #[test]
    fn sphere_vertices_near_surface_and_closed() {
        let m = sphere_mesh(64);
        m.validate().unwrap();
        let diag = 2.0 / 64.0 * 3f64.sqrt();
        let worst = m.vertices.iter().map(|v| (v.norm() - 0.5).abs()).fold(0.0, f64::max);
        assert!(worst < diag, "worst radial error {worst}");
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.is_closed());
    }

    #[test]
    fn normals_and_winding_point_outward() {
        let m = sphere_mesh(48);
        let mean = m.vertices.iter().zip(&m.vertex_normals).map(|(v, n)| n.dot(&v.normalize())).sum::<f64>()
            / m.vertices.len() as f64;
        assert!(mean > 0.99, "mean normal alignment {mean}");
        for n in &m.vertex_normals {
            assert!((n.norm() - 1.0).abs() < 1e-5);
        }
        let mut inward = Vec::new();
        for f in 0..m.faces.len() {
            let c = m.faces[f].iter().map(|&i| m.vertices[i as usize]).sum::<Vector3<f64>>();
            let n = m.face_cross(f);
            // zero-area slivers from vertices snapped onto grid corners have no orientation
            if n.norm() > 1e-12 && n.dot(&c) <= 0.0 {
                inward.push((f, n.norm()));
            }
        }
        assert!(inward.is_empty(), "{} inward faces, e.g. {:?}", inward.len(), &inward[..inward.len().min(5)]);
    }

    #[test]
    fn positive_field_gives_empty_mesh() {
        let m = marching_cubes(&SphereSdf::new(Vector3::repeat(5.0), 0.5), 16, &Aabb::cube(1.0)).unwrap();
        assert!(m.is_empty() && m.vertices.is_empty());
        assert!(marching_cubes(&SphereSdf::new(Vector3::zeros(), 0.5), 4, &Aabb::cube(1.0)).is_err());
    }

    #[test]
    fn other_primitives_have_expected_topology() {
        let b = marching_cubes(&BoxSdf::new(Vector3::zeros(), Vector3::new(0.4, 0.3, 0.5)), 40, &Aabb::cube(1.0)).unwrap();
        assert_eq!(b.euler_characteristic(), 2);
        let t = marching_cubes(&TorusSdf::new(Vector3::zeros(), 0.5, 0.2), 48, &Aabb::cube(1.0)).unwrap();
        assert_eq!(t.euler_characteristic(), 0);
        assert!(t.is_closed());
    }

    fn sphere_chamfer(m: &TriangleMesh, rng: &mut ChaCha8Rng) -> f64 {
        // distance from mesh samples to the sphere plus from sphere samples to the mesh vertices
        let pts = sample_surface(m, 4000, rng).unwrap();
        let a = pts.iter().map(|p| (p.norm() - 0.5).abs()).sum::<f64>() / pts.len() as f64;
        let mut b = 0.0;
        let m_dirs: Vec<Vector3<f64>> = pts.iter().map(|p| p.normalize()).collect();
        for d in m_dirs.iter().take(500) {
            let q = d * 0.5;
            b += pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
        }
        0.5 * (a + b / 500.0)
    }

    #[test]
    fn chamfer_decreases_with_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c: Vec<f64> = [32, 64, 128].iter().map(|&r| sphere_chamfer(&sphere_mesh(r), &mut rng)).collect();
        assert!(c[0] > c[1] && c[1] > c[2], "{c:?}");
    }

    fn two_triangles() -> TriangleMesh {
        // areas 4.5 and 0.5
        TriangleMesh {
            vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(3.0, 0.0, 0.0),
                Vector3::new(0.0, 3.0, 0.0),
                Vector3::new(5.0, 0.0, 0.0),
                Vector3::new(6.0, 0.0, 0.0),
                Vector3::new(5.0, 1.0, 0.0),
            ],
            faces: vec![[0, 1, 2], [3, 4, 5]],
            vertex_normals: vec![],
        }
    }

    #[test]
    fn sampling_follows_area() {
        let m = two_triangles();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let s = sample_surface_with_faces(&m, n, &mut rng).unwrap();
        let big = s.iter().filter(|(p, _)| p.x < 4.0).count() as f64;
        assert_eq!(big as usize, s.iter().filter(|(_, f)| *f == 0).count());
        let sigma = (n as f64 * 0.9 * 0.1).sqrt();
        assert!((big - 0.9 * n as f64).abs() < 3.0 * sigma, "big {big}");
    }

    #[test]
    fn samples_lie_inside_the_triangle() {
        let m = TriangleMesh {
            vertices: vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)],
            faces: vec![[0, 1, 2]],
            vertex_normals: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = sample_surface(&m, 2000, &mut rng).unwrap();
        for p in &pts {
            let (u, v) = (p.x, p.y);
            assert!(u >= 0.0 && v >= 0.0 && u + v <= 1.0 + 1e-12 && p.z == 0.0);
        }
        let again = sample_surface(&m, 2000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pts, again);
        assert!(sample_surface(&TriangleMesh::default(), 3, &mut rng).is_err());
    }
}
