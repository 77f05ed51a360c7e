//! Finite-difference checks of the field and loss gradients.

use super::{central, GradReport};
use gsdf::coupling::{alignment_loss, projection_distance_loss, query_centers, tight_opacity, tight_opacity_backward};
use gsdf::image::Image;
use gsdf::rasterizer::photometric_loss;
use gsdf::scene::gaussians::inverse_sigmoid;
use gsdf::scene::{Aabb, Camera, GaussianParams, GaussianSet};
use gsdf::sdf_field::{eikonal_from_grads, FieldConfig, FieldGrads, GridConfig, PointGrad, SdfField, SignedDistance};
use gsdf::volumetric::{consistency_losses, ConsistencyOptions, GsTarget, Ray, RayBatch, RaySamples};
use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 100;

/// An index whose entry in `mags` is within 1e-3 of the largest, so the finite
/// difference is not dominated by rounding.
fn significant(rng: &mut ChaCha8Rng, mags: &[f64]) -> usize {
    let top = mags.iter().cloned().fold(0.0, f64::max);
    let ok: Vec<usize> = (0..mags.len()).filter(|&k| mags[k] > 1e-3 * top).collect();
    ok[rng.random_range(0..ok.len())]
}

fn field(rng: &mut ChaCha8Rng) -> SdfField {
    let cfg = FieldConfig {
        grid: GridConfig { levels: 4, base_resolution: 3, log2_table_size: 8, ..Default::default() },
        hidden: 12,
        ..Default::default()
    };
    let mut f = SdfField::new(&cfg, Aabb::cube(1.0), 0.5, rng).unwrap();
    f.grid.features.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    // Geometric init zeroes the encoding weights; wake them up.
    f.mlp.params.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    f
}

fn point(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    point(rng, 1.0).normalize()
}

fn gaussians(rng: &mut ChaCha8Rng, n: usize) -> GaussianSet {
    let mut g = GaussianSet::new(0);
    for _ in 0..n {
        g.push(GaussianParams {
            position: point(rng, 0.7),
            rotation: Vector4::new(rng.random_range(0.5..1.5), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)),
            log_scale: Vector3::new(-2.0, rng.random_range(-2.5..-1.5), rng.random_range(-4.0..-3.5)),
            opacity_logit: inverse_sigmoid(0.5),
            sh: vec![0.5; 3],
        });
    }
    g
}

/// `sum_i df_i f(x_i) + dgrad_i . grad f(x_i)` for the upstream terms in `pts`.
fn probe(field: &SdfField, pts: &[PointGrad]) -> f64 {
    pts.iter()
        .map(|p| {
            let (f, g) = field.value_and_grad(&p.x);
            p.df * f + p.dgrad.dot(&g)
        })
        .sum()
}

pub fn field_parameter_and_position_gradients() -> Vec<(&'static str, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut feat, mut mlp, mut pos) = (GradReport::new(), GradReport::new(), GradReport::new());
    while pos.cases < CASES {
        let f = field(&mut rng);
        let pts: Vec<PointGrad> = (0..3)
            .map(|_| PointGrad { x: point(&mut rng, 0.9), df: rng.random_range(-1.0..1.0), dgrad: point(&mut rng, 1.0) })
            .collect();
        let mut grads = FieldGrads::zeros_like(&f);
        let dx = f.backward(&pts, &mut grads);

        let touched: Vec<usize> = (0..grads.features.len()).filter(|&k| grads.features[k] != 0.0).collect();
        let k = touched[rng.random_range(0..touched.len())];
        feat.record(grads.features[k], central(1e-5, |h| {
            let mut g = f.clone();
            g.grid.features[k] += h;
            probe(&g, &pts)
        }));

        let k = rng.random_range(0..grads.mlp.len());
        mlp.record(grads.mlp[k], central(1e-5, |h| {
            let mut g = f.clone();
            g.mlp.params[k] += h;
            probe(&g, &pts)
        }));

        let (i, a) = (rng.random_range(0..pts.len()), rng.random_range(0..3));
        pos.record(dx[i][a], central(1e-6, |h| {
            let mut q = pts.clone();
            q[i].x[a] += h;
            probe(&f, &q[i..=i])
        }));
    }
    vec![("features", feat), ("mlp", mlp), ("position", pos)]
}

pub fn photometric_loss_gradient() -> Vec<(&'static str, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut r = GradReport::new();
    while r.cases < CASES {
        let (w, h) = (16, 13);
        let img = |rng: &mut ChaCha8Rng| Image::from_data(w, h, 3, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let (a, b) = (img(&mut rng), img(&mut rng));
        let lambda = rng.random_range(0.0..1.0);
        let k = rng.random_range(0..a.data.len());
        let analytic = photometric_loss(&a, &b, lambda).unwrap().grad.data[k];
        r.record(analytic, central(1e-7, |d| {
            let mut p = a.clone();
            p.data[k] += d;
            photometric_loss(&p, &b, lambda).unwrap().total
        }));
    }
    vec![("photometric", r)]
}

pub fn coupling_loss_gradients() -> Vec<(&'static str, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut rot, mut pos) = (GradReport::new(), GradReport::new());
    while pos.cases < CASES {
        let f = field(&mut rng);
        let g = gaussians(&mut rng, 4);
        let w_proj = rng.random_range(0.1..2.0);
        let loss = |set: &GaussianSet| {
            let q = query_centers(&f, set);
            alignment_loss(set, &q).unwrap().value + w_proj * projection_distance_loss(set, &q).value
        };
        let q = query_centers(&f, &g);
        let l = alignment_loss(&g, &q).unwrap().combined(&projection_distance_loss(&g, &q), w_proj);
        let dx = f.backward(&l.points, &mut FieldGrads::zeros_like(&f));

        let (i, k) = (rng.random_range(0..g.len()), rng.random_range(0..4));
        rot.record(l.d_rotations[i][k], central(1e-6, |h| {
            let mut p = g.clone();
            p.rotations[i][k] += h;
            loss(&p)
        }));
        let (i, a) = (rng.random_range(0..g.len()), rng.random_range(0..3));
        pos.record(dx[i][a], central(1e-6, |h| {
            let mut p = g.clone();
            p.positions[i][a] += h;
            loss(&p)
        }));
    }
    vec![("rotation", rot), ("position", pos)]
}

pub fn tight_opacity_gradients() -> Vec<(&'static str, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (mut beta_r, mut pos, mut feat) = (GradReport::new(), GradReport::new(), GradReport::new());
    while pos.cases < CASES {
        let f = field(&mut rng);
        let g = gaussians(&mut rng, 5);
        let (beta, scale) = (rng.random_range(2.0..40.0), rng.random_range(0.5..4.0));
        let wts: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |field: &SdfField, set: &GaussianSet, beta: f64| {
            tight_opacity(field, set, beta, scale).opacity.iter().zip(&wts).map(|(o, w)| o * w).sum::<f64>()
        };
        let t = tight_opacity(&f, &g, beta, scale);
        let (pts, d_beta) = tight_opacity_backward(&g, &t, &wts, beta, scale);
        let mut grads = FieldGrads::zeros_like(&f);
        let dx = f.backward(&pts, &mut grads);

        beta_r.record(d_beta, central(1e-6, |h| loss(&f, &g, beta + h)));
        let flat: Vec<f64> = dx.iter().flat_map(|d| d.iter().map(|v| v.abs()).collect::<Vec<_>>()).collect();
        let ia = significant(&mut rng, &flat);
        let (i, a) = (ia / 3, ia % 3);
        pos.record(dx[i][a], central(1e-6, |h| {
            let mut p = g.clone();
            p.positions[i][a] += h;
            loss(&f, &p, beta)
        }));
        let k = significant(&mut rng, &grads.mlp.iter().map(|v| v.abs()).collect::<Vec<_>>());
        feat.record(grads.mlp[k], central(1e-6, |h| {
            let mut ff = f.clone();
            ff.mlp.params[k] += h;
            loss(&ff, &g, beta)
        }));
    }
    vec![("beta", beta_r), ("position", pos), ("mlp", feat)]
}

fn ray_setup(rng: &mut ChaCha8Rng, rays: usize, m: usize) -> (RayBatch, RaySamples, Vec<GsTarget>, Vec<Camera>) {
    let cam = Camera::look_at(Vector3::new(0.3, -0.2, -3.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), 16, 16, 0.8).unwrap();
    let mut batch = RayBatch::default();
    let mut ts = Vec::new();
    let mut points = Vec::new();
    let mut targets = Vec::new();
    for k in 0..rays {
        let (i, j) = (rng.random_range(4..12), rng.random_range(4..12));
        let (origin, dir) = cam.pixel_ray(i, j);
        let ray = Ray { origin, dir, camera: 0, pixel: (i, j), t_near: 2.0, t_far: 4.0 };
        let mut t: Vec<f64> = (0..m).map(|s| 2.0 + 2.0 * (s as f64 + rng.random_range(0.1..0.9)) / m as f64).collect();
        t.sort_by(f64::total_cmp);
        for &tt in &t {
            points.push(origin + dir * tt);
        }
        ts.extend(t);
        batch.rays.push(ray);
        targets.push(GsTarget {
            depth: rng.random_range(2.5..3.5),
            normal: if k % 4 == 3 { Vector3::zeros() } else { unit(rng) },
            alpha: rng.random_range(0.6..1.0),
        });
    }
    (batch, RaySamples { ts, points, per_ray: m }, targets, vec![cam])
}

pub fn volumetric_consistency_gradients() -> Vec<(&'static str, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let (mut df, mut dg, mut ds) = (GradReport::new(), GradReport::new(), GradReport::new());
    let m = 12;
    while ds.cases < CASES {
        let (batch, samples, targets, cams) = ray_setup(&mut rng, 3, m);
        // SDF values falling through zero along each ray, with noisy gradients.
        let mut evals = Vec::new();
        for r in 0..3 {
            let hit = rng.random_range(2.6..3.4);
            for s in 0..m {
                let t = samples.ts[r * m + s];
                evals.push((hit - t + rng.random_range(-0.02..0.02), -batch.rays[r].dir + point(&mut rng, 0.3)));
            }
        }
        let s = rng.random_range(5.0..40.0);
        let opts = ConsistencyOptions { normalize_depth: rng.random_bool(0.5) };
        let w = (rng.random_range(0.5..2.0), rng.random_range(0.05..1.0));
        let loss = |ev: &[(f64, Vector3<f64>)], s: f64| {
            let c = consistency_losses(&batch, &samples, ev, s, &targets, &cams, opts, w).unwrap();
            w.0 * c.l_vd + w.1 * c.l_vn
        };
        let c = consistency_losses(&batch, &samples, &evals, s, &targets, &cams, opts, w).unwrap();
        if c.depth_rays == 0 {
            continue;
        }
        let k = significant(&mut rng, &c.d_f.iter().map(|v| v.abs()).collect::<Vec<_>>());
        df.record(c.d_f[k], central(1e-7, |h| {
            let mut e = evals.clone();
            e[k].0 += h;
            loss(&e, s)
        }));
        let flat: Vec<f64> = c.d_grad.iter().flat_map(|d| d.iter().map(|v| v.abs()).collect::<Vec<_>>()).collect();
        let ka = significant(&mut rng, &flat);
        let (k, a) = (ka / 3, ka % 3);
        dg.record(c.d_grad[k][a], central(1e-7, |h| {
            let mut e = evals.clone();
            e[k].1[a] += h;
            loss(&e, s)
        }));
        ds.record(c.d_s, central(1e-6, |h| loss(&evals, s + h)));
    }
    vec![("f", df), ("grad f", dg), ("s", ds)]
}

pub fn eikonal_gradient() -> Vec<(&'static str, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut r = GradReport::new();
    while r.cases < CASES {
        let gs: Vec<Vector3<f64>> = (0..6).map(|_| point(&mut rng, 2.0)).collect();
        let (_, du) = eikonal_from_grads(&gs).unwrap();
        let (i, a) = (rng.random_range(0..gs.len()), rng.random_range(0..3));
        r.record(du[i][a], central(1e-7, |h| {
            let mut p = gs.clone();
            p[i][a] += h;
            eikonal_from_grads(&p).unwrap().0
        }));
    }
    vec![("eikonal", r)]
}
