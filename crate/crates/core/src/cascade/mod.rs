//! The bi-level detection pipeline: a rough hand pass, attention-based
//! re-detection on the centralized frame, and keypoint regression inside the
//! detected box, with stage strategies selectable for ablation.
//!
//! Coordinate discipline: every box and keypoint that leaves this module is
//! in the original image frame. Networks regress values normalized to [0, 1]
//! of their own input frame; de-normalization and the mapping back through
//! resizes, translations, and crops happen here.

mod train;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point2, Translation};
use crate::image::{centralize, crop_resize, resize_image, Image};
use crate::nn::{forward, io as weights_io, NetworkSpec, NetworkWeights};
use crate::tensor::Tensor;

pub use train::{
    finetune_hand_detector, train_finger_detector, train_hand_detector, KeypointAugment,
    TrainOutcome,
};

/// Hand-localization strategies compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandStrategy {
    /// Single rough pass over the whole frame.
    Rhd,
    /// Centralize on the rough box, then re-detect with the rough weights.
    Redetect,
    /// Centralize on the rough box, then re-detect with the fine-tuned
    /// attention weights.
    Ahd,
    /// Ground-truth box passed through unchanged.
    Gt,
}

impl HandStrategy {
    pub const ALL: [HandStrategy; 4] =
        [HandStrategy::Rhd, HandStrategy::Redetect, HandStrategy::Ahd, HandStrategy::Gt];

    pub fn name(self) -> &'static str {
        match self {
            HandStrategy::Rhd => "rhd",
            HandStrategy::Redetect => "redetect",
            HandStrategy::Ahd => "ahd",
            HandStrategy::Gt => "gt",
        }
    }
}

impl FromStr for HandStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rhd" => Ok(HandStrategy::Rhd),
            "redetect" => Ok(HandStrategy::Redetect),
            "ahd" => Ok(HandStrategy::Ahd),
            "gt" => Ok(HandStrategy::Gt),
            other => Err(Error::Config(format!(
                "unknown hand strategy {other:?}; expected rhd, redetect, ahd, or gt"
            ))),
        }
    }
}

impl std::fmt::Display for HandStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fingertip-localization strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerStrategy {
    /// Single-point detector: fingertip only.
    Spd,
    /// Multi-point detector: fingertip plus finger joint.
    Mfd,
}

impl FingerStrategy {
    pub const ALL: [FingerStrategy; 2] = [FingerStrategy::Spd, FingerStrategy::Mfd];

    pub fn name(self) -> &'static str {
        match self {
            FingerStrategy::Spd => "spd",
            FingerStrategy::Mfd => "mfd",
        }
    }
}

impl FromStr for FingerStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spd" => Ok(FingerStrategy::Spd),
            "mfd" => Ok(FingerStrategy::Mfd),
            other => {
                Err(Error::Config(format!("unknown finger strategy {other:?}; expected spd or mfd")))
            }
        }
    }
}

impl std::fmt::Display for FingerStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Network input frames used across the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputGeometry {
    /// Resize target during detection training, before the translation crop.
    pub train_size: (usize, usize),
    /// Hand-net input frame; the crop taken out of `train_size` during
    /// training, and the direct resize target at inference.
    pub crop_size: (usize, usize),
    /// Finger-net input frame; the box patch is resampled to this.
    pub mfd_patch_size: (usize, usize),
}

impl InputGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = |(w, h): (usize, usize)| w >= 4 && h >= 4;
        if !(ok(self.train_size) && ok(self.crop_size) && ok(self.mfd_patch_size)) {
            return Err(Error::Config(format!("input geometry sides must be >= 4, got {self:?}")));
        }
        if self.crop_size.0 > self.train_size.0 || self.crop_size.1 > self.train_size.1 {
            return Err(Error::Config(format!(
                "crop size {:?} must fit within train size {:?}",
                self.crop_size, self.train_size
            )));
        }
        Ok(())
    }
}

/// Conv backbone builder shared by the hand and finger nets: per entry in
/// `conv_channels` a 3x3 stride-1 pad-1 convolution, relu, and 2x2 max pool;
/// then fully connected layers with relu between, and a linear head of
/// `output_dim`. Input sides should be multiples of 2 per pool stage or the
/// pools drop their last row and column.
pub fn build_network_spec(
    input: (usize, usize),
    conv_channels: &[usize],
    fc_dims: &[usize],
    output_dim: usize,
) -> NetworkSpec {
    use crate::nn::LayerSpec;
    let mut layers = Vec::new();
    for &ch in conv_channels {
        layers.push(LayerSpec::Conv { out_channels: ch, kernel: 3, stride: 1, padding: 1 });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
    }
    layers.push(LayerSpec::Flatten);
    for &dim in fc_dims {
        layers.push(LayerSpec::Fc { out_features: dim });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Fc { out_features: output_dim });
    NetworkSpec { input_shape: (3, input.1, input.0), layers, output_dim }
}

const ROUGH_HAND_FILE: &str = "rough_hand.cdw";
const ATTENTION_HAND_FILE: &str = "attention_hand.cdw";
const FINGER_MFD_FILE: &str = "finger_mfd.cdw";
const FINGER_SPD_FILE: &str = "finger_spd.cdw";
const DESCRIPTOR_FILE: &str = "models.json";

/// Everything inference needs, persisted as four weight files plus a JSON
/// descriptor in one directory.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub rough_hand: (NetworkSpec, NetworkWeights),
    pub attention_hand: (NetworkSpec, NetworkWeights),
    pub finger_multi: (NetworkSpec, NetworkWeights),
    pub finger_single: (NetworkSpec, NetworkWeights),
    /// Per-channel dataset mean; the fill for centralization and crops.
    pub fill_mean: [f32; 3],
    pub input_geometry: InputGeometry,
    /// Box inflation per side before the finger crop, as a fraction of the
    /// box dimensions.
    pub margin: f64,
    /// Largest centering offset used during fine-tuning, in pixels of the
    /// original frame.
    pub bias_max: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelsDescriptor {
    fill_mean: [f32; 3],
    input_geometry: InputGeometry,
    margin: f64,
    bias_max: f64,
}

impl TrainedModels {
    pub fn validate(&self) -> Result<()> {
        self.input_geometry.validate()?;
        let nets = [
            ("rough_hand", &self.rough_hand, 4usize),
            ("attention_hand", &self.attention_hand, 4),
            ("finger_multi", &self.finger_multi, 4),
            ("finger_single", &self.finger_single, 2),
        ];
        for (name, (spec, weights), dim) in nets {
            if spec.output_dim != dim {
                return Err(Error::Config(format!(
                    "{name} must output {dim} values, spec outputs {}",
                    spec.output_dim
                )));
            }
            weights.matches(spec)?;
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.bias_max >= 0.0 && self.bias_max.is_finite()) {
            return Err(Error::Config(format!("bias_max must be >= 0, got {}", self.bias_max)));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        weights_io::save_weights(&self.rough_hand.0, &self.rough_hand.1, &dir.join(ROUGH_HAND_FILE))?;
        weights_io::save_weights(
            &self.attention_hand.0,
            &self.attention_hand.1,
            &dir.join(ATTENTION_HAND_FILE),
        )?;
        weights_io::save_weights(&self.finger_multi.0, &self.finger_multi.1, &dir.join(FINGER_MFD_FILE))?;
        weights_io::save_weights(&self.finger_single.0, &self.finger_single.1, &dir.join(FINGER_SPD_FILE))?;
        let descriptor = ModelsDescriptor {
            fill_mean: self.fill_mean,
            input_geometry: self.input_geometry,
            margin: self.margin,
            bias_max: self.bias_max,
        };
        let json = serde_json::to_string_pretty(&descriptor)
            .map_err(|e| Error::Json { context: "models descriptor".into(), source: e })?;
        let path = dir.join(DESCRIPTOR_FILE);
        fs::write(&path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let descriptor_path = dir.join(DESCRIPTOR_FILE);
        let json = fs::read_to_string(&descriptor_path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput { path: descriptor_path.clone() }
            } else {
                Error::io(descriptor_path.clone(), e)
            }
        })?;
        let descriptor: ModelsDescriptor = serde_json::from_str(&json)
            .map_err(|e| Error::Json { context: descriptor_path.display().to_string(), source: e })?;
        let models = TrainedModels {
            rough_hand: weights_io::load_weights(&dir.join(ROUGH_HAND_FILE))?,
            attention_hand: weights_io::load_weights(&dir.join(ATTENTION_HAND_FILE))?,
            finger_multi: weights_io::load_weights(&dir.join(FINGER_MFD_FILE))?,
            finger_single: weights_io::load_weights(&dir.join(FINGER_SPD_FILE))?,
            fill_mean: descriptor.fill_mean,
            input_geometry: descriptor.input_geometry,
            margin: descriptor.margin,
            bias_max: descriptor.bias_max,
        };
        models.validate()?;
        Ok(models)
    }

    /// Weight-file path for one stage inside a models directory.
    pub fn stage_path(dir: &Path, stage: &str) -> PathBuf {
        let file = match stage {
            "hand" => ROUGH_HAND_FILE,
            "finetune" => ATTENTION_HAND_FILE,
            "finger-mfd" => FINGER_MFD_FILE,
            "finger-spd" => FINGER_SPD_FILE,
            other => panic!("unknown stage {other}"),
        };
        dir.join(file)
    }
}

/// Writes only the JSON descriptor. Per-stage training refreshes it without
/// requiring all four weight files to exist yet.
pub fn write_models_descriptor(
    dir: &Path,
    fill_mean: [f32; 3],
    input_geometry: InputGeometry,
    margin: f64,
    bias_max: f64,
) -> Result<()> {
    let descriptor = ModelsDescriptor { fill_mean, input_geometry, margin, bias_max };
    let json = serde_json::to_string_pretty(&descriptor)
        .map_err(|e| Error::Json { context: "models descriptor".into(), source: e })?;
    let path = dir.join(DESCRIPTOR_FILE);
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

/// Stage wall times in milliseconds. `hand_ms` and `finger_ms` cover the
/// network forward passes; `processing_ms` is everything else in the call
/// (resampling, centralization, cropping, coordinate mapping).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub hand_ms: f64,
    pub finger_ms: f64,
    pub processing_ms: f64,
    pub total_ms: f64,
}

/// One cascade output. Every coordinate is in the original image frame.
#[derive(Debug, Clone)]
pub struct Detection {
    pub hand_box: BBox,
    pub fingertip: Point2,
    /// Absent for the single-point finger strategy.
    pub joint: Option<Point2>,
    pub timings: StageTimings,
    pub hand_strategy: HandStrategy,
    pub finger_strategy: FingerStrategy,
    /// True when a degenerate hand regression needed repair.
    pub hand_repaired: bool,
}

/// Side of the substitute box when a regression collapses below 1 px².
const MIN_BOX_SIDE: f64 = 8.0;

/// Reorders corners, clamps to the frame, and replaces boxes below 1 px²
/// (or with non-finite corners) by a box of at least `MIN_BOX_SIDE` about
/// the predicted center. The flag reports whether the degenerate rule fired.
fn repair_box(raw: BBox, width: f64, height: f64) -> (BBox, bool) {
    let finite =
        raw.x1.is_finite() && raw.y1.is_finite() && raw.x2.is_finite() && raw.y2.is_finite();
    let center = if finite {
        let b = BBox::from_corners(Point2::new(raw.x1, raw.y1), Point2::new(raw.x2, raw.y2));
        let clamped = BBox::new(
            b.x1.clamp(0.0, width),
            b.y1.clamp(0.0, height),
            b.x2.clamp(0.0, width),
            b.y2.clamp(0.0, height),
        );
        if clamped.area() >= 1.0 {
            return (clamped, false);
        }
        clamped.center()
    } else {
        Point2::new(width / 2.0, height / 2.0)
    };
    let side_x = MIN_BOX_SIDE.min(width);
    let side_y = MIN_BOX_SIDE.min(height);
    let x1 = (center.x - side_x / 2.0).clamp(0.0, width - side_x);
    let y1 = (center.y - side_y / 2.0).clamp(0.0, height - side_y);
    (BBox::new(x1, y1, x1 + side_x, y1 + side_y), true)
}

/// Single-image forward pass; returns the raw output vector.
fn forward_single(spec: &NetworkSpec, weights: &NetworkWeights, img: &Image) -> Result<Vec<f32>> {
    let batch = Tensor::new(vec![1, 3, img.height(), img.width()], img.data().to_vec())?;
    Ok(forward(spec, weights, &batch)?.into_data())
}

/// One hand-net pass: resize to the net frame, forward, de-normalize, repair.
/// The resize factor cancels against de-normalization by the net frame, so
/// normalized corners scale straight back to the original dimensions.
fn predict_box(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    net_input: (usize, usize),
    img: &Image,
    forward_nanos: &mut u128,
) -> Result<(BBox, bool)> {
    let (resized, _) = resize_image(img, net_input);
    let started = Instant::now();
    let out = forward_single(spec, weights, &resized)?;
    *forward_nanos += started.elapsed().as_nanos();
    let (w, h) = (img.width() as f64, img.height() as f64);
    let raw =
        BBox::new(out[0] as f64 * w, out[1] as f64 * h, out[2] as f64 * w, out[3] as f64 * h);
    Ok(repair_box(raw, w, h))
}

/// Hand box per strategy. Returns the box, whether any repair fired, and the
/// centralizing translation when a re-detection pass ran.
fn hand_stage(
    models: &TrainedModels,
    img: &Image,
    strategy: HandStrategy,
    gt_box: Option<&BBox>,
    forward_nanos: &mut u128,
) -> Result<(BBox, bool, Option<Translation>)> {
    let net_input = models.input_geometry.crop_size;
    match strategy {
        HandStrategy::Gt => {
            let gt = gt_box.ok_or_else(|| {
                Error::Config("ground-truth hand strategy requires a gt box".into())
            })?;
            Ok((*gt, false, None))
        }
        HandStrategy::Rhd => {
            let (rough, weights) = (&models.rough_hand.0, &models.rough_hand.1);
            let (box_, repaired) = predict_box(rough, weights, net_input, img, forward_nanos)?;
            Ok((box_, repaired, None))
        }
        HandStrategy::Redetect | HandStrategy::Ahd => {
            let (first, repaired_first) = predict_box(
                &models.rough_hand.0,
                &models.rough_hand.1,
                net_input,
                img,
                forward_nanos,
            )?;
            let (centered, translation) = centralize(img, &first, models.fill_mean);
            let (spec, weights) = if strategy == HandStrategy::Ahd {
                (&models.attention_hand.0, &models.attention_hand.1)
            } else {
                (&models.rough_hand.0, &models.rough_hand.1)
            };
            let (second, repaired_second) =
                predict_box(spec, weights, net_input, &centered, forward_nanos)?;
            let back = translation.invert().apply_box(&second);
            // The inverse translation can push the box past the frame edge.
            let (final_box, repaired_back) =
                repair_box(back, img.width() as f64, img.height() as f64);
            Ok((final_box, repaired_first || repaired_second || repaired_back, Some(translation)))
        }
    }
}

/// Keypoints from a hand box: inflate by the margin, crop to the finger-net
/// frame, forward, map the normalized outputs back to the original frame.
fn finger_stage(
    models: &TrainedModels,
    img: &Image,
    hand_box: &BBox,
    strategy: FingerStrategy,
    forward_nanos: &mut u128,
) -> Result<(Point2, Option<Point2>)> {
    let inflated = hand_box.inflate(models.margin);
    let (patch, transform) =
        crop_resize(img, &inflated, models.input_geometry.mfd_patch_size, models.fill_mean)?;
    let (spec, weights) = match strategy {
        FingerStrategy::Mfd => (&models.finger_multi.0, &models.finger_multi.1),
        FingerStrategy::Spd => (&models.finger_single.0, &models.finger_single.1),
    };
    let started = Instant::now();
    let out = forward_single(spec, weights, &patch)?;
    *forward_nanos += started.elapsed().as_nanos();
    let (pw, ph) = (patch.width() as f64, patch.height() as f64);
    let fingertip = transform.to_frame(Point2::new(out[0] as f64 * pw, out[1] as f64 * ph));
    let joint = (strategy == FingerStrategy::Mfd)
        .then(|| transform.to_frame(Point2::new(out[2] as f64 * pw, out[3] as f64 * ph)));
    Ok((fingertip, joint))
}

/// Rough hand box for an image of any size, in its coordinates.
pub fn rough_detect(models: &TrainedModels, img: &Image) -> Result<BBox> {
    let mut nanos = 0u128;
    hand_stage(models, img, HandStrategy::Rhd, None, &mut nanos).map(|(b, _, _)| b)
}

/// Attention-based re-detection: rough box, centralize with the mean fill,
/// re-detect with the fine-tuned weights, map back through the inverse
/// translation. Returns the box in original coordinates plus the
/// centralizing translation that was applied.
pub fn ahd_detect(models: &TrainedModels, img: &Image) -> Result<(BBox, Translation)> {
    let mut nanos = 0u128;
    let (box_, _, translation) = hand_stage(models, img, HandStrategy::Ahd, None, &mut nanos)?;
    Ok((box_, translation.expect("re-detection always centralizes")))
}

/// Fingertip (and joint, for the multi-point strategy) inside a hand box.
pub fn finger_predict(
    models: &TrainedModels,
    img: &Image,
    hand_box: &BBox,
    strategy: FingerStrategy,
) -> Result<(Point2, Option<Point2>)> {
    let mut nanos = 0u128;
    finger_stage(models, img, hand_box, strategy, &mut nanos)
}

/// Full pipeline for one frame. `gt_box` must be supplied exactly when the
/// hand strategy is ground truth. Keypoints are clamped into the frame as a
/// final repair so downstream consumers always see in-image coordinates.
pub fn run_cascade(
    models: &TrainedModels,
    img: &Image,
    hand_strategy: HandStrategy,
    finger_strategy: FingerStrategy,
    gt_box: Option<&BBox>,
) -> Result<Detection> {
    match (hand_strategy, gt_box.is_some()) {
        (HandStrategy::Gt, false) => {
            return Err(Error::Config("ground-truth hand strategy requires a gt box".into()))
        }
        (HandStrategy::Gt, true) => {}
        (_, true) => {
            return Err(Error::Config(format!(
                "gt box supplied but the hand strategy is {hand_strategy}"
            )))
        }
        (_, false) => {}
    }
    let started = Instant::now();
    let mut hand_nanos = 0u128;
    let mut finger_nanos = 0u128;
    let (hand_box, hand_repaired, _) =
        hand_stage(models, img, hand_strategy, gt_box, &mut hand_nanos)?;
    let (fingertip, joint) = finger_stage(models, img, &hand_box, finger_strategy, &mut finger_nanos)?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let clamp = |p: Point2| Point2::new(p.x.clamp(0.0, w), p.y.clamp(0.0, h));
    let total_nanos = started.elapsed().as_nanos();
    let to_ms = |n: u128| n as f64 / 1e6;
    Ok(Detection {
        hand_box,
        fingertip: clamp(fingertip),
        joint: joint.map(clamp),
        timings: StageTimings {
            hand_ms: to_ms(hand_nanos),
            finger_ms: to_ms(finger_nanos),
            processing_ms: to_ms(total_nanos.saturating_sub(hand_nanos + finger_nanos)),
            total_ms: to_ms(total_nanos),
        },
        hand_strategy,
        finger_strategy,
        hand_repaired,
    })
}
