//! Synthetic egocentric-scene generation, dataset manifest I/O, and the
//! three training augmentations.
//!
//! The generator is a desk-scale stand-in for a real egocentric recording:
//! hands cluster around a Gaussian location prior, point left most of the
//! time, and roughly a third of the frames are dark. Those statistics, plus
//! skin-colored distractor shapes, are what the attention-based re-detection
//! stage exists to cope with, so they are reproduced here with exact labels.

mod augment;
mod scene;

pub use augment::{augment_detection_sample, augment_keypoint_sample, synthesize_centered_sample, AugmentedSample};
pub use scene::{generate_frame, generate_frame_detailed, sample_frame_params, FrameParams, HandGeometry};

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point2};
use crate::image::Image;

/// Index-finger pointing direction of a generated frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Up,
    Right,
}

/// Frame tags carried through generation, manifests, and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub dark: bool,
    pub dir: Direction,
}

/// Fully labeled in-memory frame with real-valued pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub image: Image,
    pub hand_box: BBox,
    pub fingertip: Point2,
    pub joint: Point2,
    pub meta: FrameMeta,
}

/// Labeled frame stored as 8-bit RGB, the form datasets live in between
/// generation and training. Quantization happens exactly once, here, so a
/// frame that went through PNG round trips equals one converted in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Manifest-relative image name (assigned even for frames that never
    /// touch the filesystem; used as the deterministic accumulation order).
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub hand_box: BBox,
    pub fingertip: Point2,
    pub joint: Point2,
    pub meta: FrameMeta,
}

/// Image name a frame gets inside a generated dataset.
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

impl Sample {
    pub fn from_labeled(frame: &LabeledFrame, name: String) -> Self {
        Self {
            name,
            width: frame.image.width(),
            height: frame.image.height(),
            rgb: frame.image.to_rgb8(),
            hand_box: frame.hand_box,
            fingertip: frame.fingertip,
            joint: frame.joint,
            meta: frame.meta,
        }
    }

    pub fn to_labeled(&self) -> LabeledFrame {
        LabeledFrame {
            image: Image::from_rgb8(self.width, self.height, &self.rgb).expect("stored rgb length is consistent"),
            hand_box: self.hand_box,
            fingertip: self.fingertip,
            joint: self.joint,
            meta: self.meta,
        }
    }
}

/// How hand-box centers are placed in the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Truncated Gaussian around `location_mean` (the egocentric prior).
    Gaussian,
    /// Uniform over all positions where the hand fits (stress distribution
    /// for probing detection away from the prior).
    Uniform,
}

/// Generator configuration. `seed` plus a frame index fully determine a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub image_size: (usize, usize),
    pub location_mean: Point2,
    /// Per-axis Gaussian sigma in pixels; 0 collapses onto the mean.
    pub location_sigma: (f64, f64),
    pub left_weight: f64,
    pub up_weight: f64,
    pub right_weight: f64,
    pub dark_fraction: f64,
    pub distractor_count_range: (usize, usize),
    /// Hand size as a fraction of the smaller image dimension.
    pub hand_scale_range: (f64, f64),
    pub placement: Placement,
    pub seed: u64,
}

impl SceneParams {
    /// Defaults mirroring the documented recording statistics: Gaussian
    /// location prior at the frame center with sigma = dimension / 6, 60%
    /// left-pointing, 30% dark frames.
    pub fn desk_default(image_size: (usize, usize)) -> Self {
        let (w, h) = image_size;
        Self {
            image_size,
            location_mean: Point2::new(w as f64 / 2.0, h as f64 / 2.0),
            location_sigma: (w as f64 / 6.0, h as f64 / 6.0),
            left_weight: 0.6,
            up_weight: 0.2,
            right_weight: 0.2,
            dark_fraction: 0.3,
            distractor_count_range: (2, 5),
            hand_scale_range: (0.10, 0.15),
            placement: Placement::Gaussian,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        if w < 16 || h < 16 {
            return Err(Error::Config(format!("image size {w}x{h} is below the 16x16 minimum")));
        }
        if !(self.location_sigma.0 >= 0.0 && self.location_sigma.1 >= 0.0)
            || !self.location_sigma.0.is_finite()
            || !self.location_sigma.1.is_finite()
        {
            return Err(Error::Config(format!("location_sigma {:?} must be finite and >= 0", self.location_sigma)));
        }
        let weights = [self.left_weight, self.up_weight, self.right_weight];
        if weights.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("direction weights must be >= 0 with a positive sum".into()));
        }
        if !(0.0..=1.0).contains(&self.dark_fraction) {
            return Err(Error::Config(format!("dark_fraction {} must be in [0, 1]", self.dark_fraction)));
        }
        if self.distractor_count_range.0 > self.distractor_count_range.1 {
            return Err(Error::Config("distractor_count_range low bound exceeds high bound".into()));
        }
        let (lo, hi) = self.hand_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::Config(format!("hand_scale_range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 0.5")));
        }
        Ok(())
    }
}

/// One manifest record: a relative image path plus its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image: String,
    #[serde(with = "bbox_array")]
    pub bbox: BBox,
    #[serde(with = "point_array")]
    pub fingertip: Point2,
    #[serde(with = "point_array")]
    pub joint: Point2,
    pub meta: FrameMeta,
}

mod bbox_array {
    use super::BBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        [b.x1, b.y1, b.x2, b.y2].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        Ok(BBox::new(x1, y1, x2, y2))
    }
}

mod point_array {
    use super::Point2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point2, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point2, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Point2::new(x, y))
    }
}

/// Ordered dataset listing, one record per frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<FrameRecord>,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let mut out = Vec::new();
        for record in &self.records {
            serde_json::to_writer(&mut out, record)
                .map_err(|source| Error::Json { context: format!("encoding manifest record for {}", record.image), source })?;
            out.push(b'\n');
        }
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(&out).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let file = fs::File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput { path: path.clone() },
            _ => Error::io(&path, e),
        })?;
        let mut records = Vec::new();
        for (number, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FrameRecord = serde_json::from_str(&line).map_err(|source| Error::Json {
                context: format!("{} line {}", path.display(), number + 1),
                source,
            })?;
            records.push(record);
        }
        Ok(Self { records })
    }
}

/// Generates `count` frames, writes PNGs plus the manifest into `out_dir`,
/// and returns the manifest.
pub fn generate_dataset(params: &SceneParams, count: usize, out_dir: &Path) -> Result<DatasetManifest> {
    params.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(count);
    for index in 0..count {
        let frame = generate_frame(params, index as u64)?;
        let name = frame_name(index);
        let path = out_dir.join(&name);
        save_png(&frame.image, &path)?;
        records.push(FrameRecord {
            image: name,
            bbox: frame.hand_box,
            fingertip: frame.fingertip,
            joint: frame.joint,
            meta: frame.meta,
        });
    }
    let manifest = DatasetManifest { records };
    manifest.save(out_dir)?;
    Ok(manifest)
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let buffer = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .expect("rgb8 buffer length matches dimensions");
    buffer.save(path).map_err(|e| Error::ImageDecode { path: path.to_path_buf(), source: e })
}

pub fn load_png_sample(dir: &Path, record: &FrameRecord) -> Result<Sample> {
    let path = dir.join(&record.image);
    if !path.exists() {
        return Err(Error::MissingInput { path });
    }
    let decoded = image::open(&path).map_err(|e| Error::ImageDecode { path: path.clone(), source: e })?.to_rgb8();
    Ok(Sample {
        name: record.image.clone(),
        width: decoded.width() as usize,
        height: decoded.height() as usize,
        rgb: decoded.into_raw(),
        hand_box: record.bbox,
        fingertip: record.fingertip,
        joint: record.joint,
        meta: record.meta,
    })
}

/// Loads every frame referenced by the directory's manifest.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest = DatasetManifest::load(dir)?;
    manifest.records.iter().map(|record| load_png_sample(dir, record)).collect()
}

/// Per-channel pixel mean over the whole dataset. Frames are accumulated in
/// ascending image-name order, so permuting the input changes nothing.
pub fn dataset_mean(samples: &[Sample]) -> Result<[f32; 3]> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("dataset_mean needs at least one frame"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].name.cmp(&samples[b].name));
    let mut sums = [0.0f64; 3];
    let mut count = 0u64;
    for &i in &order {
        let s = &samples[i];
        for px in s.rgb.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as f64 / 255.0;
            }
        }
        count += (s.width * s.height) as u64;
    }
    Ok([0, 1, 2].map(|c| (sums[c] / count as f64) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let params = SceneParams::desk_default((64, 64));
        let manifest = generate_dataset(&params, 0, dir.path()).unwrap();
        assert!(manifest.records.is_empty());
        assert!(dir.path().join(MANIFEST_NAME).exists());
        assert!(DatasetManifest::load(dir.path()).unwrap().records.is_empty());
    }

    #[test]
    fn generated_dataset_loads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let params = SceneParams::desk_default((64, 64));
        let manifest = generate_dataset(&params, 4, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 4);
        for (i, sample) in loaded.iter().enumerate() {
            let record = &manifest.records[i];
            assert_eq!(sample.hand_box, record.bbox);
            assert_eq!(sample.fingertip, record.fingertip);
            assert_eq!(sample.joint, record.joint);
            assert_eq!(sample.meta, record.meta);
            // Pixels equal the in-memory frame after the shared 8-bit
            // quantization.
            let frame = generate_frame(&params, i as u64).unwrap();
            assert_eq!(sample.rgb, frame.image.to_rgb8());
        }
    }

    #[test]
    fn same_seed_writes_identical_manifests() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let params = SceneParams::desk_default((64, 64));
        generate_dataset(&params, 3, dir_a.path()).unwrap();
        generate_dataset(&params, 3, dir_b.path()).unwrap();
        let a = std::fs::read(dir_a.path().join(MANIFEST_NAME)).unwrap();
        let b = std::fs::read(dir_b.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_line_schema_is_stable() {
        let record = FrameRecord {
            image: "frame_00000.png".into(),
            bbox: BBox::new(1.0, 2.0, 3.0, 4.0),
            fingertip: Point2::new(2.5, 3.5),
            joint: Point2::new(2.0, 3.0),
            meta: FrameMeta { dark: true, dir: Direction::Left },
        };
        let line = serde_json::to_string(&record).unwrap();
        assert_eq!(
            line,
            r#"{"image":"frame_00000.png","bbox":[1.0,2.0,3.0,4.0],"fingertip":[2.5,3.5],"joint":[2.0,3.0],"meta":{"dark":true,"dir":"left"}}"#
        );
        let back: FrameRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, record);
    }

    fn constant_sample(name: &str, value: f32) -> Sample {
        let frame = LabeledFrame {
            image: Image::filled(8, 8, [value; 3]),
            hand_box: BBox::new(1.0, 1.0, 5.0, 5.0),
            fingertip: Point2::new(3.0, 3.0),
            joint: Point2::new(2.0, 2.0),
            meta: FrameMeta { dark: false, dir: Direction::Up },
        };
        Sample::from_labeled(&frame, name.to_string())
    }

    #[test]
    fn dataset_mean_examples() {
        let black = [constant_sample("a.png", 0.0)];
        assert_eq!(dataset_mean(&black).unwrap(), [0.0; 3]);

        let pair = [constant_sample("a.png", 0.25), constant_sample("b.png", 0.75)];
        let mean = dataset_mean(&pair).unwrap();
        // 0.25 and 0.75 survive 8-bit quantization only approximately
        // (64/255 and 191/255), so the mean sits within half a step of 0.5.
        for c in 0..3 {
            assert!((mean[c] - 0.5).abs() < 2.0 / 255.0, "channel {c} mean {}", mean[c]);
        }

        let swapped = [pair[1].clone(), pair[0].clone()];
        assert_eq!(dataset_mean(&swapped).unwrap(), mean);
        assert!(dataset_mean(&[]).is_err());
    }
}
