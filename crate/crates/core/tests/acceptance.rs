//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion does. The desk-scale training runs make this
//! the slowest test in the workspace.

mod common;

use std::time::Instant;

use common::grads;
use gsdf::coupling::{alignment_loss, mean_abs_sdf, nearest_surface_point};
use gsdf::dataio::{synth_scene, PrimitiveKind, SynthScene, SynthSpec};
use gsdf::image::Image;
use gsdf::meshing::{extraction_bounds, marching_cubes, sample_surface};
use gsdf::metrics::{chamfer_l1, psnr, ssim};
use gsdf::rasterizer::{render, RenderOptions};
use gsdf::scene::gaussians::inverse_sigmoid;
use gsdf::scene::{sh_to_color, sigmoid, Aabb, Camera, GaussianParams, GaussianSet};
use gsdf::scene::sh::rgb_to_dc;
use gsdf::sdf_field::{
    eikonal_loss, init_sphere, sdf_to_opacity, uniform_samples, FieldConfig, GridConfig, SdfField, SignedDistance, SphereSdf,
};
use gsdf::trainer::{DensifyConfig, TrainConfig, Trainer};
use gsdf::volumetric::{neus_alpha, render_rays, sample_along_ray, RaySamples};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Passes when every named check holds; failing names are appended to the detail.
fn outcome_of(checks: &[(&str, bool)], detail: String) -> Outcome {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    if failed.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; failed: {}", failed.join(", ")))
    }
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut fewest = usize::MAX;
    let mut groups = 0;
    for (f, _) in common::raster::FAMILIES.iter().enumerate() {
        let r = common::raster::check_family(f, 100, 11 + f as u64);
        worst = worst.max(r.worst);
        fewest = fewest.min(r.cases);
        groups += 1;
    }
    let suites = [
        grads::field_parameter_and_position_gradients(),
        grads::photometric_loss_gradient(),
        grads::coupling_loss_gradients(),
        grads::tight_opacity_gradients(),
        grads::volumetric_consistency_gradients(),
        grads::eikonal_gradient(),
    ];
    for (_, r) in suites.iter().flatten() {
        worst = worst.max(r.worst);
        fewest = fewest.min(r.cases);
        groups += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-3 && fewest >= 100 && secs < 120.0,
        format!("{groups} gradient groups, >= {fewest} cases each, worst relative error {worst:.2e}, {secs:.1}s"),
    )
}

struct Plane {
    n: Vector3<f64>,
    d: f64,
}

impl SignedDistance for Plane {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.n.dot(x) - self.d
    }
    fn value_and_grad(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        (self.value(x), self.n)
    }
}

fn analytic_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    if ![0.1, 1.0, 10.0, 250.0].iter().all(|&b| sdf_to_opacity(0.0, b) == 0.25) {
        fails.push("Phi_beta(0)");
    }
    let a = neus_alpha(0.1, -0.1, 10.0);
    if (a - 0.6321).abs() > 1e-4 {
        fails.push("neus_alpha example");
    }

    // Two splats centred on a pixel centre: alpha_i = sigmoid(logit_i) exactly.
    let cam = Camera::new(17, 17, 17.0, 17.0, 8.5, 8.5, Matrix3::identity(), Vector3::zeros()).unwrap();
    let mut g = GaussianSet::new(0);
    let specs = [(1.0, 0.6, [0.9, 0.2, 0.1]), (2.5, 0.7, [0.1, 0.8, 0.3])];
    for (z, o, rgb) in specs {
        g.push(GaussianParams {
            position: Vector3::new(0.0, 0.0, z),
            rotation: nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::repeat(0.3f64.ln()),
            opacity_logit: inverse_sigmoid(o),
            sh: rgb.iter().map(|&c| rgb_to_dc(c)).collect(),
        });
    }
    let bg = Vector3::new(0.2, 0.3, 0.4);
    let out = render(&g, &cam, &RenderOptions { background: bg, ..Default::default() }).unwrap();
    let (a1, a2) = (sigmoid(g.opacity_logits[0]), sigmoid(g.opacity_logits[1]));
    let c1 = sh_to_color(g.sh_coeffs(0), 0, &Vector3::z());
    let c2 = sh_to_color(g.sh_coeffs(1), 0, &Vector3::z());
    let color = c1 * a1 + c2 * ((1.0 - a1) * a2) + bg * ((1.0 - a1) * (1.0 - a2));
    let depth = a1 * 1.0 + (1.0 - a1) * a2 * 2.5;
    let px = out.color.pixel(8, 8);
    let color_err = (0..3).map(|k| (px[k] - color[k]).abs()).fold(0.0, f64::max);
    let depth_err = (out.depth.data[8 * 17 + 8] - depth).abs();
    if color_err > 1e-12 || depth_err > 1e-12 {
        fails.push("two-splat expansion");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = uniform_samples(&Aabb::cube(1.0), 2000, &mut rng);
    let sphere = SphereSdf::new(Vector3::new(0.1, -0.2, 0.05), 0.6);
    let plane = Plane { n: Vector3::new(1.0, 2.0, -2.0) / 3.0, d: 0.1 };
    let eik = eikonal_loss(&sphere, &samples).unwrap().max(eikonal_loss(&plane, &samples).unwrap());
    if eik > 1e-20 {
        fails.push("eikonal on unit-gradient fields");
    }

    let unit = SphereSdf::new(Vector3::zeros(), 1.0);
    let target = Vector3::new(1.0, 0.0, 0.0);
    let proj_err = [Vector3::new(2.0, 0.0, 0.0), Vector3::new(0.5, 0.0, 0.0)]
        .iter()
        .map(|x| (nearest_surface_point(&unit, x).0 - target).norm())
        .fold(0.0, f64::max);
    if proj_err > 0.02 {
        fails.push("nearest_surface_point");
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 30.0 {
        fails.push("runtime");
    }
    outcome(
        fails.is_empty(),
        format!(
            "neus_alpha {a:.5}, two-splat color/depth error {color_err:.1e}/{depth_err:.1e}, eikonal {eik:.1e}, projection error {proj_err:.1e}, {secs:.2}s{}",
            if fails.is_empty() { String::new() } else { format!("; failed: {}", fails.join(", ")) }
        ),
    )
}

fn sphere_init(field: &mut SdfField) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let steps = TrainConfig::default().init_sphere_steps;
    init_sphere(field, 0.5, steps, &mut rng).unwrap();
    let held_out = uniform_samples(&field.bounds(), 5000, &mut ChaCha8Rng::seed_from_u64(32));
    let vals = field.eval_values(&held_out);
    let residual = held_out.iter().zip(&vals).map(|(x, f)| (f - (x.norm() - 0.5)).abs()).sum::<f64>() / vals.len() as f64;
    let mesh = marching_cubes(&*field, 64, &field.bounds()).unwrap();
    let chi = mesh.euler_characteristic();
    let closed = mesh.is_closed();
    let radial = mesh.vertices.iter().map(|v| (v.norm() - 0.5).abs()).fold(0.0, f64::max);
    outcome(
        residual < 0.01 && closed && chi == 2 && radial < 0.054,
        format!("held-out residual {residual:.4}, closed {closed}, euler {chi}, max vertex radial error {radial:.4}"),
    )
}

fn depth_oracle(field: &SdfField) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let bounds = field.bounds();
    let (m, s) = (256, 200.0);
    let (mut worst_ratio, mut misses) = (0.0f64, 0);
    let rays = 1000;
    for _ in 0..rays {
        let o = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize() * 3.0;
        let aim = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.25;
        let d = (aim - o).normalize();
        let (t0, t1) = bounds.intersect_ray(&o, &d).unwrap();
        // |o + t d| = 0.5, nearer root
        let b = o.dot(&d);
        let hit = -b - (b * b - (o.norm_squared() - 0.25)).sqrt();
        let ts = sample_along_ray(t0, t1, m, false, &mut rng).unwrap();
        let spacing = (t1 - t0) / m as f64;
        let points: Vec<Vector3<f64>> = ts.iter().map(|t| o + d * *t).collect();
        let evals = field.eval_batch(&points);
        let samples = RaySamples { ts, points, per_ray: m };
        let r = &render_rays(&samples, &evals, s)[0];
        if r.weight <= 0.0 {
            misses += 1;
            continue;
        }
        worst_ratio = worst_ratio.max((r.depth / r.weight - hit).abs() / spacing);
    }
    outcome(
        misses == 0 && worst_ratio <= 2.0,
        format!("{rays} rays, worst depth error {worst_ratio:.3} sample spacings, {misses} without weight"),
    )
}

/// Results of one desk-scale run.
struct Run {
    psnr: f64,
    chamfer: f64,
    mean_abs_f: f64,
    align: f64,
    gaussians: usize,
    diagonal: f64,
    seconds: f64,
}

const DESK_ITERS: usize = 3000;
const MESH_RES: usize = 256;
const SURFACE_SAMPLES: usize = 100_000;

fn desk_scene() -> SynthScene {
    let spec = SynthSpec { primitive: PrimitiveKind::Union, views: 32, resolution: 64, ..Default::default() };
    synth_scene(&spec, &mut ChaCha8Rng::seed_from_u64(spec.seed)).unwrap()
}

fn evaluate(t: &Trainer, scene: &SynthScene, mesh_res: usize, samples: usize) -> (f64, f64) {
    let opacity = t.opacity_override();
    let opts = t.render_options(opacity.as_deref());
    let psnr_sum: f64 = scene
        .test
        .cameras
        .iter()
        .zip(&scene.test.images)
        .map(|(cam, img)| psnr(&render(&t.gaussians, cam, &opts).unwrap().color.clamped01(), img).unwrap())
        .sum();
    let mesh = marching_cubes(&t.field, mesh_res, &extraction_bounds(&t.bounds())).unwrap();
    let chamfer = if mesh.is_empty() {
        f64::INFINITY
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = sample_surface(&mesh, samples, &mut rng).unwrap();
        let gt = sample_surface(scene.train.gt_mesh.as_ref().unwrap(), samples, &mut rng).unwrap();
        chamfer_l1(&pred, &gt).unwrap()
    };
    (psnr_sum / scene.test.len() as f64, chamfer)
}

fn desk_run(label: &str, cfg: TrainConfig) -> Run {
    let t0 = Instant::now();
    let scene = desk_scene();
    let mut t = Trainer::new(cfg, &scene.train).unwrap();
    t.run(&scene.train, |_, _| Ok(())).unwrap();
    let (psnr, chamfer) = evaluate(&t, &scene, MESH_RES, SURFACE_SAMPLES);
    let seconds = t0.elapsed().as_secs_f64();
    let q = t.field.eval_batch(&t.gaussians.positions);
    let run = Run {
        psnr,
        chamfer,
        mean_abs_f: mean_abs_sdf(&q),
        align: alignment_loss(&t.gaussians, &q).unwrap().value,
        gaussians: t.gaussians.len(),
        diagonal: t.bounds().diagonal(),
        seconds,
    };
    println!(
        "  [{label}] psnr {:.2} dB, chamfer {:.4}, mean|f| {:.4}, alignment {:.4}, {} gaussians, {:.0}s",
        run.psnr, run.chamfer, run.mean_abs_f, run.align, run.gaussians, run.seconds
    );
    run
}

fn desk_config() -> TrainConfig {
    TrainConfig { iterations: DESK_ITERS, ..Default::default() }
}

fn end_to_end(loose: &Run, tight: &Run) -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let checks = [
        ("loose psnr >= 25", loose.psnr >= 25.0),
        ("loose chamfer <= 0.04", loose.chamfer <= 0.04),
        ("loose wall clock <= 20 min", loose.seconds <= 20.0 * 60.0),
        ("|psnr gap| <= 1.5 dB", (loose.psnr - tight.psnr).abs() <= 1.5),
        ("tight chamfer <= 1.5x loose", tight.chamfer <= 1.5 * loose.chamfer),
        ("loose psnr >= tight", loose.psnr >= tight.psnr),
        ("loose chamfer <= tight", loose.chamfer <= tight.chamfer),
    ];
    outcome_of(
        &checks,
        format!(
            "loose {:.2} dB / {:.4}, tight {:.2} dB / {:.4}, loose wall clock {:.1} min on {cores} core(s)",
            loose.psnr,
            loose.chamfer,
            tight.psnr,
            tight.chamfer,
            loose.seconds / 60.0
        ),
    )
}

fn ablation(full: &Run, ablated: &Run) -> Outcome {
    let ratio = ablated.chamfer / full.chamfer;
    let dpsnr = ablated.psnr - full.psnr;
    outcome(
        ratio >= 1.25 && dpsnr.abs() < 1.0,
        format!("without depth/normal consistency: chamfer x{ratio:.2}, psnr change {dpsnr:+.2} dB"),
    )
}

fn alignment(loose: &Run, baseline: &Run) -> Outcome {
    outcome_of(
        &[
            ("mean|f| < 0.05 diagonal", loose.mean_abs_f < 0.05 * loose.diagonal),
            ("mean 1-|n.n| < 0.1", loose.align < 0.1),
            ("gaussians <= baseline", loose.gaussians <= baseline.gaussians),
        ],
        format!(
            "mean|f| {:.4} (limit {:.4}), mean 1-|n.n| {:.4}, gaussians {} vs {} without coupling",
            loose.mean_abs_f,
            0.05 * loose.diagonal,
            loose.align,
            loose.gaussians,
            baseline.gaussians
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut chamfer_err = 0.0f64;
    for n in [1, 2, 7, 50, 123, 200] {
        let cloud = |rng: &mut ChaCha8Rng, k: usize| -> Vec<Vector3<f64>> {
            (0..k).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
        };
        let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, 200 - n / 2));
        let one_way = |p: &[Vector3<f64>], q: &[Vector3<f64>]| {
            p.iter().map(|x| q.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / p.len() as f64
        };
        let brute = 0.5 * (one_way(&a, &b) + one_way(&b, &a));
        chamfer_err = chamfer_err.max((chamfer_l1(&a, &b).unwrap() - brute).abs());
    }
    let a = Image::from_data(16, 16, 3, (0..768).map(|_| rng.random_range(0.2..0.8)).collect()).unwrap();
    let shifted = Image { data: a.data.iter().map(|v| v + 0.1).collect(), ..a.clone() };
    let mut half = a.clone();
    half.data.iter_mut().step_by(2).for_each(|v| *v += 0.2);
    let psnr_err = (psnr(&a, &shifted).unwrap() - 20.0)
        .abs()
        .max((psnr(&a, &half).unwrap() - 10.0 * (1.0f64 / 0.02).log10()).abs());
    let self_ssim = ssim(&a, &a).unwrap();
    outcome(
        chamfer_err <= 1e-12 && psnr_err <= 1e-9 && self_ssim == 1.0,
        format!("chamfer vs brute force {chamfer_err:.1e}, psnr closed form {psnr_err:.1e}, ssim(a, a) = {self_ssim}"),
    )
}

fn small_config() -> TrainConfig {
    TrainConfig {
        iterations: 60,
        warmup_steps: 15,
        rays_per_step: 64,
        samples_per_ray: 16,
        eikonal_samples: 64,
        init_sphere_steps: 100,
        field: FieldConfig {
            grid: GridConfig { levels: 4, base_resolution: 4, log2_table_size: 10, ..Default::default() },
            hidden: 16,
            ..Default::default()
        },
        densify: DensifyConfig { from: 10, interval: 10, until_fraction: 0.9, ..Default::default() },
        seed: 9,
        ..Default::default()
    }
}

fn with_workers<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        f()
    }
}

fn determinism() -> Outcome {
    let spec = SynthSpec { views: 8, test_views: 2, resolution: 32, sparse_per_view: 50, gt_resolution: 48, ..Default::default() };
    let scene = synth_scene(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let run = |workers: usize| {
        with_workers(workers, || {
            let mut t = Trainer::new(small_config(), &scene.train).unwrap();
            t.run(&scene.train, |_, _| Ok(())).unwrap();
            let (p, c) = evaluate(&t, &scene, 48, 5000);
            (t.losses_csv(), p, c)
        })
    };
    let (csv_a, pa, ca) = run(1);
    let (csv_b, _, _) = run(1);
    let (_, pm, cm) = run(4);
    let same_csv = csv_a == csv_b;
    let dp = (pa - pm).abs();
    let dc = (ca - cm).abs();
    outcome(
        same_csv && dp <= 1e-6 && dc <= 1e-6,
        format!("loss CSVs identical at 1 worker: {same_csv}; 1 vs 4 workers: psnr diff {dp:.1e}, chamfer diff {dc:.1e}"),
    )
}

fn report(name: &'static str, o: Outcome, results: &mut Vec<(&'static str, Outcome)>) {
    println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((name, o));
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    report("1 gradient suite", gradient_suite(), &mut results);
    report("2 analytic oracles", analytic_oracles(), &mut results);

    let mut field = SdfField::new(&FieldConfig::default(), Aabb::cube(1.0), 0.5, &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
    report("3 sphere init", sphere_init(&mut field), &mut results);
    report("4 volumetric depth oracle", depth_oracle(&field), &mut results);

    let loose = desk_run("loose", desk_config());
    let tight = desk_run("tight", TrainConfig { coupling: gsdf::coupling::CouplingMode::Tight, ..desk_config() });
    report("5 end-to-end desk scale", end_to_end(&loose, &tight), &mut results);
    let ablated = desk_run("loose, no depth/normal", TrainConfig { disable_volumetric: true, ..desk_config() });
    report("6 ablation direction", ablation(&loose, &ablated), &mut results);
    let baseline = desk_run("no coupling", TrainConfig { coupling: gsdf::coupling::CouplingMode::None, ..desk_config() });
    report("7 alignment statistics", alignment(&loose, &baseline), &mut results);

    report("8 metric oracles", metric_oracles(), &mut results);
    report("9 determinism", determinism(), &mut results);

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
