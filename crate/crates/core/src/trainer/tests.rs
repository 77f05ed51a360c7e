use super::*;
use crate::dataio::{synth_scene, PrimitiveKind, SynthSpec};
use crate::sdf_field::{FieldConfig, GridConfig};
use proptest::prelude::{prop_assert, proptest};

fn ones() -> LossParts {
    LossParts { photometric: 1.0, depth: 1.0, normal: 1.0, align: 1.0, eikonal: 1.0, sfm: 0.0 }
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!(total_loss(&LossParts::default(), &w, 0).unwrap(), 0.0);
    assert!((total_loss(&ones(), &w, 0).unwrap() - 2.2001).abs() < 1e-12);
    let p = LossParts { photometric: 0.37, ..ones() };
    assert_eq!(total_loss(&p, &LossWeights::ZERO, 0).unwrap(), 0.37);
    let with_sfm = LossParts { sfm: 2.0, ..ones() };
    assert!((total_loss(&with_sfm, &w, 0).unwrap() - 2.4001).abs() < 1e-12);
}

#[test]
fn non_finite_part_is_named() {
    let p = LossParts { eikonal: f64::NAN, ..ones() };
    match total_loss(&p, &LossWeights::default(), 17) {
        Err(Error::NonFiniteLoss { part, iteration }) => assert_eq!((part, iteration), ("eikonal", 17)),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn eikonal_weight_is_linear(eik in 0.0f64..10.0, a4 in 0.0f64..5.0, rest in 0.0f64..3.0) {
        let p = LossParts { photometric: rest, depth: rest, normal: rest, align: rest, eikonal: eik, sfm: rest };
        let w1 = LossWeights { eikonal: a4, ..Default::default() };
        let w2 = LossWeights { eikonal: 2.0 * a4, ..Default::default() };
        let base = total_loss(&p, &LossWeights { eikonal: 0.0, ..Default::default() }, 0).unwrap();
        let c1 = total_loss(&p, &w1, 0).unwrap() - base;
        let c2 = total_loss(&p, &w2, 0).unwrap() - base;
        prop_assert!((c2 - 2.0 * c1).abs() <= 1e-9 * (1.0 + c2.abs()));
    }

    #[test]
    fn sfm_loss_is_order_invariant(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = Image::from_data(8, 6, 1, (0..48).map(|_| rng.random_range(0.5..3.0)).collect()).unwrap();
        let alpha = Image::from_data(8, 6, 1, (0..48).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let mut pts: Vec<DepthPoint> =
            (0..20).map(|_| DepthPoint { u: rng.random_range(0..8), v: rng.random_range(0..6), z: rng.random_range(0.5..3.0) }).collect();
        let a = sfm_depth_loss(&depth, &alpha, &pts).unwrap().value;
        pts.reverse();
        let b = sfm_depth_loss(&depth, &alpha, &pts).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }
}

#[test]
fn sfm_loss_examples_and_gradient() {
    let mut depth = Image::new(4, 4, 1);
    let mut alpha = Image::new(4, 4, 1);
    depth.data[5] = 1.5;
    alpha.data[5] = 1.0;
    let one = [DepthPoint { u: 1, v: 1, z: 1.0 }];
    assert!((sfm_depth_loss(&depth, &alpha, &one).unwrap().value - 0.25).abs() < 1e-15);
    let exact = [DepthPoint { u: 1, v: 1, z: 1.5 }];
    assert_eq!(sfm_depth_loss(&depth, &alpha, &exact).unwrap().value, 0.0);
    assert_eq!(sfm_depth_loss(&depth, &alpha, &[]).unwrap().value, 0.0);
    let dim = [DepthPoint { u: 0, v: 0, z: 1.0 }];
    assert_eq!(sfm_depth_loss(&depth, &alpha, &dim).unwrap().used, 0);

    // central differences through depth and alpha at a partially covered pixel
    depth.data[5] = 1.2;
    alpha.data[5] = 0.8;
    let l = sfm_depth_loss(&depth, &alpha, &one).unwrap();
    let h = 1e-6;
    let f = |d: f64, a: f64| {
        let mut dd = depth.clone();
        let mut aa = alpha.clone();
        dd.data[5] = d;
        aa.data[5] = a;
        sfm_depth_loss(&dd, &aa, &one).unwrap().value
    };
    let gd = (f(1.2 + h, 0.8) - f(1.2 - h, 0.8)) / (2.0 * h);
    let ga = (f(1.2, 0.8 + h) - f(1.2, 0.8 - h)) / (2.0 * h);
    assert!((gd - l.d_depth.data[5]).abs() < 1e-6 * gd.abs().max(1.0));
    assert!((ga - l.d_alpha.data[5]).abs() < 1e-6 * ga.abs().max(1.0));
}

#[test]
fn epochs_visit_every_view_once() {
    for epoch in 0..3 {
        let mut seen: Vec<usize> = (0..7).map(|k| camera_for_iteration(5, epoch * 7 + k, 7)).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }
    let a: Vec<usize> = (0..7).map(|k| camera_for_iteration(5, k, 7)).collect();
    let b: Vec<usize> = (7..14).map(|k| camera_for_iteration(5, k, 7)).collect();
    assert_ne!(a, b);
}

fn small_field() -> FieldConfig {
    FieldConfig {
        grid: GridConfig { levels: 4, base_resolution: 4, log2_table_size: 10, ..Default::default() },
        hidden: 16,
        ..Default::default()
    }
}

fn small_scene() -> Dataset {
    let spec = SynthSpec {
        primitive: PrimitiveKind::Sphere,
        views: 6,
        test_views: 1,
        resolution: 32,
        sparse_per_view: 40,
        gt_resolution: 32,
        ..Default::default()
    };
    synth_scene(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().train
}

fn small_config(iterations: usize, warmup: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        warmup_steps: warmup,
        rays_per_step: 64,
        samples_per_ray: 16,
        eikonal_samples: 64,
        init_sphere_steps: 100,
        field: small_field(),
        densify: DensifyConfig { from: 10, interval: 10, until_fraction: 0.9, ..Default::default() },
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn warmup_steps_report_inactive_geometry() {
    let data = small_scene();
    let mut t = Trainer::new(small_config(10, 3), &data).unwrap();
    for it in 0..5 {
        let r = t.step(&data).unwrap();
        if it < 3 {
            assert!(!r.geometric);
            assert_eq!((r.depth, r.normal, r.align, r.projection, r.eikonal), (0.0, 0.0, 0.0, 0.0, 0.0));
            assert!((r.total - r.photometric - 0.1 * r.sfm).abs() < 1e-12);
        } else {
            assert!(r.geometric && r.eikonal > 0.0 && r.align > 0.0);
        }
    }
}

#[test]
fn identical_seeds_give_identical_traces() {
    let data = small_scene();
    let run = || {
        let mut t = Trainer::new(small_config(100, 20), &data).unwrap();
        t.run(&data, |_, _| Ok(())).unwrap();
        t.losses_csv()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.lines().count(), 101);
    assert_eq!(a, b);
}

#[test]
fn resume_continues_bit_for_bit() {
    let data = small_scene();
    let cfg = small_config(40, 10);
    let mut full = Trainer::new(cfg.clone(), &data).unwrap();
    full.run(&data, |_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut part = Trainer::new(cfg, &data).unwrap();
    for _ in 0..25 {
        part.step(&data).unwrap();
    }
    part.save(dir.path()).unwrap();
    for f in ["gaussians.ply", "field.bin", "optimizer.bin", "config.json", "losses.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let mut resumed = Trainer::load(dir.path()).unwrap();
    assert_eq!(resumed.iteration, 25);
    resumed.run(&data, |_, _| Ok(())).unwrap();
    assert_eq!(resumed.losses_csv(), full.losses_csv());
    assert_eq!(resumed.gaussians, full.gaussians);
}

#[test]
fn tight_mode_keeps_logits_and_trains_beta() {
    let data = small_scene();
    let cfg = TrainConfig { coupling: CouplingMode::Tight, ..small_config(6, 2) };
    let mut t = Trainer::new(cfg, &data).unwrap();
    let logits = t.gaussians.opacity_logits.clone();
    let beta = t.field.log_beta;
    t.run(&data, |_, _| Ok(())).unwrap();
    assert_eq!(t.gaussians.opacity_logits, logits);
    assert_ne!(t.field.log_beta, beta);
    assert!(t.effective_opacity().iter().all(|&o| o <= 0.25 + 1e-12));
}

#[test]
fn uncoupled_mode_leaves_field_alone() {
    let data = small_scene();
    let cfg = TrainConfig { coupling: CouplingMode::None, ..small_config(6, 2) };
    let mut t = Trainer::new(cfg, &data).unwrap();
    let f0 = t.field.clone();
    t.run(&data, |_, _| Ok(())).unwrap();
    assert_eq!(t.field, f0);
}

#[test]
fn densification_keeps_optimizer_in_step() {
    let data = small_scene();
    let cfg = TrainConfig {
        densify: DensifyConfig { from: 2, interval: 3, until_fraction: 1.0, grad_threshold: 1e-7, ..Default::default() },
        ..small_config(12, 4)
    };
    let mut t = Trainer::new(cfg, &data).unwrap();
    let n0 = t.gaussians.len();
    t.run(&data, |_, _| Ok(())).unwrap();
    assert_ne!(t.gaussians.len(), n0);
    assert_eq!(t.optim.positions.len(), 3 * t.gaussians.len());
    assert_eq!(t.optim.opacity.len(), t.gaussians.len());
    assert_eq!(t.stats.len(), t.gaussians.len());
}

#[test]
fn random_init_without_points() {
    let mut data = small_scene();
    data.points = None;
    data.sparse_depth = None;
    let cfg = TrainConfig { init_points: 300, ..small_config(2, 1) };
    let t = Trainer::new(cfg, &data).unwrap();
    assert_eq!(t.gaussians.len(), 300);
    assert!(t.gaussians.positions.iter().all(|p| data.bounds.contains(p)));
}
