//! The three training augmentations. Each one maps image and labels through
//! a single shared transform; nothing here ever moves a label independently
//! of its pixels.

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point2, Translation};
use crate::image::{crop_resize, resize_image, translate_image, warp_point, warp_similarity, Image};
use crate::rng::Rng;

use super::LabeledFrame;

const CROP_ATTEMPTS: u32 = 30;
const WARP_ATTEMPTS: u32 = 30;

/// Minimum fraction of hand-box area a random crop must retain.
const CROP_KEEP_FRACTION: f64 = 0.5;

/// Detection-augmentation result.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub frame: LabeledFrame,
    /// True when no admissible random crop was found and the deterministic
    /// center crop was used instead.
    pub fallback_center_crop: bool,
}

/// Resize to `train_size`, then randomly crop to `crop_size`. Labels follow
/// the same scale and shift; the hand box is not clipped to the crop, so a
/// box partly outside the crop keeps its true extent. Crops that would cut
/// away more than half of the hand-box area are rejected and resampled; if
/// none is admissible after bounded retries, the center crop is used and
/// flagged.
pub fn augment_detection_sample(
    frame: &LabeledFrame,
    train_size: (usize, usize),
    crop_size: (usize, usize),
    rng: &mut Rng,
) -> Result<AugmentedSample> {
    let (tw, th) = train_size;
    let (cw, ch) = crop_size;
    if cw > tw || ch > th || cw == 0 || ch == 0 {
        return Err(Error::Config(format!(
            "crop size {cw}x{ch} must be within train size {tw}x{th} and nonzero"
        )));
    }

    let (resized, (sx, sy)) = resize_image(&frame.image, train_size);
    let scaled = LabeledFrame {
        image: resized,
        hand_box: frame.hand_box.scaled(sx, sy),
        fingertip: Point2::new(frame.fingertip.x * sx, frame.fingertip.y * sy),
        joint: Point2::new(frame.joint.x * sx, frame.joint.y * sy),
        meta: frame.meta,
    };
    if (tw, th) == (cw, ch) {
        return Ok(AugmentedSample { frame: apply_crop(&scaled, (0, 0), crop_size)?, fallback_center_crop: false });
    }

    let box_area = scaled.hand_box.area();
    for _ in 0..CROP_ATTEMPTS {
        let ox = rng.uniform_int(0, (tw - cw) as i64) as usize;
        let oy = rng.uniform_int(0, (th - ch) as i64) as usize;
        let crop_box = BBox::new(ox as f64, oy as f64, (ox + cw) as f64, (oy + ch) as f64);
        let retained = intersection_area(&scaled.hand_box, &crop_box);
        if retained >= CROP_KEEP_FRACTION * box_area {
            return Ok(AugmentedSample { frame: apply_crop(&scaled, (ox, oy), crop_size)?, fallback_center_crop: false });
        }
    }
    let center = ((tw - cw) / 2, (th - ch) / 2);
    Ok(AugmentedSample { frame: apply_crop(&scaled, center, crop_size)?, fallback_center_crop: true })
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    iw * ih
}

/// Integer-offset crop with label shift; exact (no resampling).
pub(crate) fn apply_crop(frame: &LabeledFrame, offset: (usize, usize), crop_size: (usize, usize)) -> Result<LabeledFrame> {
    let (ox, oy) = (offset.0 as f64, offset.1 as f64);
    let crop_box = BBox::new(ox, oy, ox + crop_size.0 as f64, oy + crop_size.1 as f64);
    // Integer-aligned unit-scale crop: bilinear degenerates to an exact copy.
    let (image, _) = crop_resize(&frame.image, &crop_box, crop_size, [0.0; 3])?;
    Ok(LabeledFrame {
        image,
        hand_box: frame.hand_box.shifted(-ox, -oy),
        fingertip: Point2::new(frame.fingertip.x - ox, frame.fingertip.y - oy),
        joint: Point2::new(frame.joint.x - ox, frame.joint.y - oy),
        meta: frame.meta,
    })
}

/// Random similarity warp (scale, rotation about the patch center) applied to
/// a keypoint patch, with the keypoints mapped by the identical transform.
/// Draws that would map a keypoint outside the patch are rejected; after
/// bounded retries the identity transform is returned.
pub fn augment_keypoint_sample(
    patch: &Image,
    keypoints: &[Point2],
    scale_range: (f64, f64),
    rotation_range_deg: (f64, f64),
    fill: [f32; 3],
    rng: &mut Rng,
) -> Result<(Image, Vec<Point2>)> {
    let (s_lo, s_hi) = scale_range;
    let (r_lo, r_hi) = rotation_range_deg;
    if !(s_lo > 0.0 && s_lo <= s_hi && s_hi.is_finite()) {
        return Err(Error::Config(format!("scale_range ({s_lo}, {s_hi}) must satisfy 0 < lo <= hi")));
    }
    if !(r_lo <= r_hi && r_lo.is_finite() && r_hi.is_finite()) {
        return Err(Error::Config(format!("rotation_range ({r_lo}, {r_hi}) must satisfy lo <= hi")));
    }
    let (w, h) = (patch.width() as f64, patch.height() as f64);
    let center = Point2::new(w / 2.0, h / 2.0);
    for _ in 0..WARP_ATTEMPTS {
        let s = rng.uniform_in(s_lo, s_hi);
        let theta = rng.uniform_in(r_lo, r_hi);
        let mapped: Vec<Point2> = keypoints.iter().map(|&p| warp_point(center, s, theta, p)).collect();
        if mapped.iter().all(|p| p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h) {
            return Ok((warp_similarity(patch, center, s, theta, fill), mapped));
        }
    }
    Ok((patch.clone(), keypoints.to_vec()))
}

/// Centralizes the frame on its hand box, then applies an extra integer
/// offset drawn uniformly from [-bias_max, +bias_max] per axis. Image and
/// labels move by the one composite translation; uncovered pixels hold
/// `fill` exactly.
pub fn synthesize_centered_sample(frame: &LabeledFrame, bias_max: f64, fill: [f32; 3], rng: &mut Rng) -> LabeledFrame {
    assert!(bias_max >= 0.0, "bias_max must be >= 0");
    let image_center = Point2::new(frame.image.width() as f64 / 2.0, frame.image.height() as f64 / 2.0);
    let centering = Translation::between_centers(frame.hand_box.center(), image_center);
    let bias = bias_max.round() as i64;
    let t = Translation::new(
        centering.dx + rng.uniform_int(-bias, bias),
        centering.dy + rng.uniform_int(-bias, bias),
    );
    LabeledFrame {
        image: translate_image(&frame.image, t, fill),
        hand_box: t.apply_box(&frame.hand_box),
        fingertip: t.apply_point(frame.fingertip),
        joint: t.apply_point(frame.joint),
        meta: frame.meta,
    }
}
