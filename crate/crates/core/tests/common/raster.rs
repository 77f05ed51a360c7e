use gsdf::image::Image;
use gsdf::rasterizer::{render, render_backward, RenderOptions};
use gsdf::scene::gaussians::inverse_sigmoid;
use gsdf::scene::{Camera, GaussianParams, GaussianSet};
use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{central, GradReport};

pub const FAMILIES: [&str; 5] = ["position", "rotation", "log_scale", "opacity_logit", "sh"];

fn random_scene(rng: &mut ChaCha8Rng) -> (GaussianSet, Camera) {
    let cam = Camera::look_at(
        Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        32,
        32,
        0.9,
    )
    .unwrap();
    let mut g = GaussianSet::new(1);
    for _ in 0..3 {
        let mut sh = vec![0.0; 12];
        for (k, v) in sh.iter_mut().enumerate() {
            *v = if k < 3 { rng.random_range(0.5..1.2) } else { rng.random_range(-0.15..0.15) };
        }
        g.push(GaussianParams {
            position: Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)),
            rotation: Vector4::new(
                rng.random_range(0.5..1.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ),
            log_scale: Vector3::new(
                rng.random_range(-2.6f64..-1.6),
                rng.random_range(-2.6f64..-1.6),
                rng.random_range(-2.6f64..-1.6),
            ),
            opacity_logit: inverse_sigmoid(rng.random_range(0.2..0.85)),
            sh,
        });
    }
    (g, cam)
}

fn perturbed(g: &GaussianSet, family: usize, i: usize, k: usize, h: f64) -> GaussianSet {
    let mut p = g.clone();
    match family {
        0 => p.positions[i][k] += h,
        1 => p.rotations[i][k] += h,
        2 => p.log_scales[i][k] += h,
        3 => p.opacity_logits[i] += h,
        _ => p.sh_coeffs_mut(i)[k] += h,
    }
    p
}

/// Single-pixel losses mixing color, depth and alpha, checked against central
/// differences for one parameter family.
pub fn check_family(family: usize, cases: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::new();
    while report.cases < cases {
        let (g, cam) = random_scene(&mut rng);
        let out = render(&g, &cam, &RenderOptions::default()).unwrap();
        let i = rng.random_range(0..g.len());
        let Some(mu) = cam.project(&g.positions[i]) else { continue };
        let x = (mu.x + rng.random_range(-2.0..2.0)).floor();
        let y = (mu.y + rng.random_range(-2.0..2.0)).floor();
        if x < 0.0 || y < 0.0 || x >= 32.0 || y >= 32.0 {
            continue;
        }
        let (x, y) = (x as usize, y as usize);
        let log = out.contributions.as_ref().unwrap().pixel(x, y);
        if !log.iter().any(|r| out.splats[r.splat as usize].id == i) {
            continue;
        }
        let wc = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let (wd, wa) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let loss = |set: &GaussianSet| {
            let o = render(set, &cam, &RenderOptions { record_contributions: false, ..Default::default() }).unwrap();
            let c = o.color.pixel(x, y);
            let p = y * 32 + x;
            wc[0] * c[0] + wc[1] * c[1] + wc[2] * c[2] + wd * o.depth.data[p] + wa * o.alpha.data[p]
        };
        let mut dc = Image::new(32, 32, 3);
        dc.pixel_mut(x, y).copy_from_slice(&wc);
        let mut dd = Image::new(32, 32, 1);
        dd.data[y * 32 + x] = wd;
        let mut da = Image::new(32, 32, 1);
        da.data[y * 32 + x] = wa;
        let grads = render_backward(&g, &out, &dc, Some(&dd), Some(&da)).unwrap().gaussians;
        let k = match family {
            0 | 2 => rng.random_range(0..3),
            1 => rng.random_range(0..4),
            3 => 0,
            _ => rng.random_range(0..12),
        };
        let analytic = match family {
            0 => grads.positions[i][k],
            1 => grads.rotations[i][k],
            2 => grads.log_scales[i][k],
            3 => grads.opacity_logits[i],
            _ => grads.sh[i * 12 + k],
        };
        let numeric = central(1e-4, |h| loss(&perturbed(&g, family, i, k, h)));
        report.record(analytic, numeric);
    }
    report
}
