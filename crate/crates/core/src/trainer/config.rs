use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMode;
use crate::error::{Error, Result};
use crate::sdf_field::FieldConfig;

/// Loss weights. `align` multiplies the alignment plus projection-distance terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub depth: f64,
    pub normal: f64,
    pub align: f64,
    pub eikonal: f64,
    pub sfm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { depth: 1.0, normal: 0.1, align: 1e-4, eikonal: 0.1, sfm: 0.1 }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights { depth: 0.0, normal: 0.0, align: 0.0, eikonal: 0.0, sfm: 0.0 };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Start value, multiplied by the scene extent.
    pub position: f64,
    /// Final position rate as a fraction of the start; log-linear in between.
    pub position_final_fraction: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    /// Degree-0 SH rate; higher bands use a twentieth of it.
    pub sh: f64,
    pub features: f64,
    pub mlp: f64,
    /// Shared by `log beta` and `log s`.
    pub sharpness: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final_fraction: 0.01,
            opacity: 0.05,
            scale: 5e-3,
            rotation: 1e-3,
            sh: 2.5e-3,
            features: 1e-2,
            mlp: 1e-3,
            sharpness: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub enabled: bool,
    /// Mean screen-space (NDC) position gradient that triggers clone or split.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Clone below, split above this max scale, as a fraction of the scene extent.
    pub small_fraction: f64,
    pub interval: usize,
    pub from: usize,
    /// Densification stops after this fraction of the iterations.
    pub until_fraction: f64,
    /// Gaussians whose screen radius exceeds this fraction of the image width are pruned.
    pub max_screen_fraction: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            grad_threshold: 2e-4,
            prune_opacity: 0.005,
            small_fraction: 0.01,
            interval: 100,
            from: 500,
            until_fraction: 0.5,
            max_screen_fraction: 0.5,
            max_gaussians: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub warmup_steps: usize,
    /// D-SSIM share of the photometric loss.
    pub lambda_dssim: f64,
    pub weights: LossWeights,
    pub coupling: CouplingMode,
    /// Multiplier on `Phi_beta(f)` when coupling is tight.
    pub opacity_scale: f64,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
    pub rays_per_step: usize,
    pub samples_per_ray: usize,
    /// Uniform samples in the bounds added to the Eikonal term each step.
    pub eikonal_samples: usize,
    /// Restrict rays to foreground masks when the dataset has them.
    pub use_masks: bool,
    pub use_sparse_depth: bool,
    /// Compare volumetric depth divided by its accumulated weight.
    pub normalize_depth: bool,
    /// Train the field with the Eikonal term alone during warm-up.
    pub eikonal_in_warmup: bool,
    /// Disable the volumetric depth and normal terms (ablation).
    pub disable_volumetric: bool,
    pub sh_degree: usize,
    /// Random Gaussians when the dataset has no sparse points.
    pub init_points: usize,
    pub init_opacity: f64,
    /// Sphere radius for the field initialization; defaults to a quarter of the smallest bounds extent.
    pub init_radius: Option<f64>,
    pub init_sphere_steps: usize,
    pub field: FieldConfig,
    pub background: Option<[f64; 3]>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            warmup_steps: 500,
            lambda_dssim: 0.2,
            weights: LossWeights::default(),
            coupling: CouplingMode::Loose,
            opacity_scale: 1.0,
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            rays_per_step: 256,
            samples_per_ray: 32,
            eikonal_samples: 256,
            use_masks: true,
            use_sparse_depth: true,
            normalize_depth: true,
            eikonal_in_warmup: false,
            disable_volumetric: false,
            sh_degree: 0,
            init_points: 5000,
            init_opacity: 0.1,
            init_radius: None,
            init_sphere_steps: 300,
            field: FieldConfig::default(),
            background: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let weights = [("depth", w.depth), ("normal", w.normal), ("align", w.align), ("eikonal", w.eikonal), ("sfm", w.sfm)];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::usage(format!("loss weight `{name}` must be finite and non-negative, got {v}")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::usage("iterations must be positive"));
        }
        if self.warmup_steps >= self.iterations {
            return Err(Error::usage(format!(
                "warmup_steps ({}) must be below iterations ({})",
                self.warmup_steps, self.iterations
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::usage("lambda_dssim must lie in [0, 1]"));
        }
        if self.rays_per_step == 0 || self.samples_per_ray < 2 {
            return Err(Error::usage("need at least one ray and two samples per ray"));
        }
        if self.sh_degree > crate::scene::sh::MAX_SH_DEGREE {
            return Err(Error::usage(format!("sh_degree {} exceeds 3", self.sh_degree)));
        }
        if !(self.opacity_scale > 0.0) || !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(Error::usage("opacity_scale and init_opacity must be positive (init_opacity below 1)"));
        }
        if self.densify.enabled && self.densify.interval == 0 {
            return Err(Error::usage("densify interval must be positive"));
        }
        let lr = &self.lr;
        let rates = [lr.position, lr.opacity, lr.scale, lr.rotation, lr.sh, lr.features, lr.mlp, lr.sharpness];
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) || !(lr.position_final_fraction > 0.0) {
            return Err(Error::usage("learning rates must be finite and non-negative"));
        }
        Ok(())
    }

    /// Weights in effect at `iteration`: geometric terms are off during warm-up.
    pub fn weights_at(&self, iteration: usize) -> LossWeights {
        if iteration >= self.warmup_steps {
            let mut w = self.weights;
            if self.disable_volumetric {
                w.depth = 0.0;
                w.normal = 0.0;
            }
            return w;
        }
        LossWeights {
            sfm: self.weights.sfm,
            eikonal: if self.eikonal_in_warmup { self.weights.eikonal } else { 0.0 },
            ..LossWeights::ZERO
        }
    }

    pub fn densify_until(&self) -> usize {
        (self.densify.until_fraction * self.iterations as f64) as usize
    }

    /// JSON or TOML, chosen by extension (`.toml`, anything else is JSON).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?
        };
        cfg.validate().map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let back: TrainConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let t = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&t).unwrap(), c);
    }

    #[test]
    fn partial_files_and_bad_values() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.toml");
        std::fs::write(&p, "iterations = 100\nwarmup_steps = 10\ncoupling = \"tight\"\n[weights]\ndepth = 0.5\n").unwrap();
        let c = TrainConfig::from_file(&p).unwrap();
        assert_eq!((c.iterations, c.coupling, c.weights.depth, c.weights.normal), (100, CouplingMode::Tight, 0.5, 0.1));
        let j = d.path().join("c.json");
        std::fs::write(&j, r#"{"iterations": 10, "warmup_steps": 10}"#).unwrap();
        assert!(matches!(TrainConfig::from_file(&j), Err(Error::Parse { .. })));
        std::fs::write(&j, r#"{"weights": {"eikonal": -1}}"#).unwrap();
        assert!(TrainConfig::from_file(&j).is_err());
        std::fs::write(&j, r#"{"iteratons": 10}"#).unwrap();
        assert!(TrainConfig::from_file(&j).is_err());
    }

    #[test]
    fn warmup_boundary() {
        let c = TrainConfig { warmup_steps: 50, ..Default::default() };
        let before = c.weights_at(49);
        assert_eq!((before.depth, before.normal, before.align, before.eikonal), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(before.sfm, c.weights.sfm);
        assert_eq!(c.weights_at(50), c.weights);
        let e = TrainConfig { eikonal_in_warmup: true, ..c.clone() };
        assert_eq!(e.weights_at(0).eikonal, 0.1);
        let ab = TrainConfig { disable_volumetric: true, ..c };
        assert_eq!((ab.weights_at(60).depth, ab.weights_at(60).normal), (0.0, 0.0));
    }
}
