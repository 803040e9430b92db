//! Flat experiment configuration. The TOML key set mirrors `RunConfig`
//! one-to-one and every key has a same-named command-line flag; flags win
//! over the file, the file wins over the defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{FingerStrategy, HandStrategy, InputGeometry, KeypointAugment};
use crate::datagen::{Placement, SceneParams};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point2};
use crate::nn::TrainConfig;
use crate::rng::derive_seed;

/// One experiment's knobs. Weight-bearing defaults: the Gaussian location
/// sigma falls back to a sixth of each image dimension, and the fine-tuning
/// bias cap and error-curve ceiling scale with the image width so desk-scale
/// frames keep the proportions of full-size ones (50 px and 100 px at width
/// 640).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub models_dir: PathBuf,
    pub out_dir: PathBuf,

    pub image_width: usize,
    pub image_height: usize,
    pub location_sigma: Option<f64>,
    pub left_weight: f64,
    pub up_weight: f64,
    pub right_weight: f64,
    pub dark_fraction: f64,
    pub distractor_min: usize,
    pub distractor_max: usize,
    pub hand_scale_min: f64,
    pub hand_scale_max: f64,
    pub placement: String,
    pub count: usize,

    pub train_size: usize,
    pub crop_size: usize,
    pub patch_size: usize,
    pub hand_channels: Vec<usize>,
    pub hand_fc: Vec<usize>,
    pub finger_channels: Vec<usize>,
    pub finger_fc: Vec<usize>,
    pub weight_init_scale: f64,

    pub hand_lr: f64,
    pub hand_momentum: f64,
    pub hand_batch: usize,
    pub hand_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_momentum: f64,
    pub finetune_batch: usize,
    pub finetune_epochs: usize,
    pub finger_lr: f64,
    pub finger_momentum: f64,
    pub finger_batch: usize,
    pub finger_epochs: usize,

    pub margin: f64,
    pub bias_max: Option<f64>,
    pub scale_min: f64,
    pub scale_max: f64,
    pub rotation_deg: f64,

    pub overlap_step: f64,
    pub error_tau_max: Option<f64>,
    pub focus_x1: f64,
    pub focus_y1: f64,
    pub focus_x2: f64,
    pub focus_y2: f64,
    pub hand_strategy: String,
    pub finger_strategy: String,

    pub bench_reps: usize,
    pub bench_warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data_dir: PathBuf::from("data"),
            models_dir: PathBuf::from("models"),
            out_dir: PathBuf::from("out"),
            image_width: 128,
            image_height: 128,
            location_sigma: None,
            left_weight: 0.6,
            up_weight: 0.2,
            right_weight: 0.2,
            dark_fraction: 0.3,
            distractor_min: 2,
            distractor_max: 5,
            hand_scale_min: 0.10,
            hand_scale_max: 0.15,
            placement: "gaussian".into(),
            count: 2000,
            train_size: 64,
            crop_size: 64,
            patch_size: 48,
            hand_channels: vec![8, 16, 32],
            hand_fc: vec![64],
            finger_channels: vec![8, 16, 32],
            finger_fc: vec![64],
            weight_init_scale: 1.0,
            hand_lr: 0.02,
            hand_momentum: 0.9,
            hand_batch: 16,
            hand_epochs: 20,
            finetune_lr: 0.01,
            finetune_momentum: 0.9,
            finetune_batch: 16,
            finetune_epochs: 15,
            finger_lr: 0.02,
            finger_momentum: 0.9,
            finger_batch: 16,
            finger_epochs: 20,
            margin: 0.15,
            bias_max: None,
            scale_min: 0.9,
            scale_max: 1.1,
            rotation_deg: 15.0,
            overlap_step: 0.05,
            error_tau_max: None,
            focus_x1: 0.25,
            focus_y1: 0.25,
            focus_x2: 0.75,
            focus_y2: 0.75,
            hand_strategy: "ahd".into(),
            finger_strategy: "mfd".into(),
            bench_reps: 200,
            bench_warmup: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput { path: path.to_path_buf() }
            } else {
                Error::io(path, e)
            }
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing config: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Scene parameters with the dataset seed derived from the master seed.
    pub fn scene_params(&self) -> Result<SceneParams> {
        let placement = match self.placement.as_str() {
            "gaussian" => Placement::Gaussian,
            "uniform" => Placement::Uniform,
            other => {
                return Err(Error::Config(format!(
                    "unknown placement {other:?}; expected gaussian or uniform"
                )))
            }
        };
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        let sigma = match self.location_sigma {
            Some(s) => (s, s),
            None => (w / 6.0, h / 6.0),
        };
        let params = SceneParams {
            image_size: (self.image_width, self.image_height),
            location_mean: Point2::new(w / 2.0, h / 2.0),
            location_sigma: sigma,
            left_weight: self.left_weight,
            up_weight: self.up_weight,
            right_weight: self.right_weight,
            dark_fraction: self.dark_fraction,
            distractor_count_range: (self.distractor_min, self.distractor_max),
            hand_scale_range: (self.hand_scale_min, self.hand_scale_max),
            placement,
            seed: derive_seed(self.seed, "data"),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn input_geometry(&self) -> InputGeometry {
        InputGeometry {
            train_size: (self.train_size, self.train_size),
            crop_size: (self.crop_size, self.crop_size),
            mfd_patch_size: (self.patch_size, self.patch_size),
        }
    }

    pub fn keypoint_augment(&self) -> KeypointAugment {
        KeypointAugment {
            scale_range: (self.scale_min, self.scale_max),
            rotation_range_deg: (-self.rotation_deg, self.rotation_deg),
        }
    }

    /// Fine-tuning bias cap: 50 px at width 640, scaled proportionally.
    pub fn resolved_bias_max(&self) -> f64 {
        self.bias_max.unwrap_or(50.0 * self.image_width as f64 / 640.0)
    }

    /// Error-curve ceiling: 100 px at width 640, scaled proportionally.
    pub fn resolved_error_tau_max(&self) -> f64 {
        self.error_tau_max.unwrap_or(100.0 * self.image_width as f64 / 640.0)
    }

    /// Overlap thresholds 0..=1 in `overlap_step` increments.
    pub fn overlap_thresholds(&self) -> Result<Vec<f64>> {
        if !(self.overlap_step > 0.0 && self.overlap_step <= 1.0) {
            return Err(Error::Config(format!(
                "overlap_step must be in (0, 1], got {}",
                self.overlap_step
            )));
        }
        let n = (1.0 / self.overlap_step).round() as usize;
        Ok((0..=n).map(|i| i as f64 * self.overlap_step).collect())
    }

    /// 101 error thresholds from 0 to the resolved ceiling.
    pub fn error_thresholds(&self) -> Result<Vec<f64>> {
        let max = self.resolved_error_tau_max();
        if !(max > 0.0 && max.is_finite()) {
            return Err(Error::Config(format!("error_tau_max must be positive, got {max}")));
        }
        Ok((0..=100).map(|i| i as f64 * max / 100.0).collect())
    }

    /// Attention focus zone in image-fraction coordinates.
    pub fn focus_zone(&self) -> BBox {
        BBox::new(self.focus_x1, self.focus_y1, self.focus_x2, self.focus_y2)
    }

    pub fn strategies(&self) -> Result<(HandStrategy, FingerStrategy)> {
        Ok((self.hand_strategy.parse()?, self.finger_strategy.parse()?))
    }

    fn train_config(&self, stage: &str, lr: f64, momentum: f64, batch: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            momentum,
            batch_size: batch,
            epochs,
            seed: derive_seed(self.seed, stage),
            weight_init_scale: self.weight_init_scale,
        }
    }

    pub fn hand_train(&self) -> TrainConfig {
        self.train_config("hand", self.hand_lr, self.hand_momentum, self.hand_batch, self.hand_epochs)
    }

    pub fn finetune_train(&self) -> TrainConfig {
        self.train_config(
            "finetune",
            self.finetune_lr,
            self.finetune_momentum,
            self.finetune_batch,
            self.finetune_epochs,
        )
    }

    pub fn finger_train(&self, strategy: FingerStrategy) -> TrainConfig {
        self.train_config(
            strategy.name(),
            self.finger_lr,
            self.finger_momentum,
            self.finger_batch,
            self.finger_epochs,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_produce_valid_scene_and_geometry() {
        let config = RunConfig::default();
        let params = config.scene_params().unwrap();
        assert_eq!(params.image_size, (128, 128));
        assert_eq!(params.location_sigma, (128.0 / 6.0, 128.0 / 6.0));
        config.input_geometry().validate().unwrap();
        assert_eq!(config.resolved_bias_max(), 10.0);
        assert_eq!(config.resolved_error_tau_max(), 20.0);
    }

    #[test]
    fn threshold_grids_have_the_documented_shape() {
        let config = RunConfig::default();
        let overlap = config.overlap_thresholds().unwrap();
        assert_eq!(overlap.len(), 21);
        assert_eq!(overlap[0], 0.0);
        assert!((overlap[20] - 1.0).abs() < 1e-12);
        let error = config.error_thresholds().unwrap();
        assert_eq!(error.len(), 101);
        assert_eq!(error[0], 0.0);
        assert!((error[100] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip_preserves_every_key() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut config = RunConfig::default();
        config.seed = 99;
        config.hand_channels = vec![4, 8];
        config.location_sigma = Some(12.5);
        config.save(&path).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seeed = 3\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn partial_files_fall_back_to_defaults() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\nimage_width = 96\n").unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.seed, 3);
        assert_eq!(loaded.image_width, 96);
        assert_eq!(loaded.image_height, 128);
        assert_eq!(loaded.hand_epochs, RunConfig::default().hand_epochs);
    }

    #[test]
    fn bad_strategy_and_placement_names_error_as_config() {
        let mut config = RunConfig::default();
        config.placement = "poisson".into();
        assert!(matches!(config.scene_params(), Err(Error::Config(_))));
        let mut config = RunConfig::default();
        config.hand_strategy = "yolo".into();
        assert!(matches!(config.strategies(), Err(Error::Config(_))));
    }

    #[test]
    fn stage_seeds_differ_but_derive_from_the_master_seed() {
        let config = RunConfig::default();
        let hand = config.hand_train().seed;
        let finetune = config.finetune_train().seed;
        let mfd = config.finger_train(FingerStrategy::Mfd).seed;
        let spd = config.finger_train(FingerStrategy::Spd).seed;
        let all = [hand, finetune, mfd, spd];
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
        }
        let mut other = RunConfig::default();
        other.seed = 8;
        assert_ne!(other.hand_train().seed, hand);
    }
}
