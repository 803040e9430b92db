//! Procedural scene sampling and rendering.
//!
//! Every frame is drawn from `Rng::for_index(seed, "frame", index)`, so
//! frames are independent of each other and reproducible in isolation. The
//! sampling order below is part of the format: `sample_frame_params` reads
//! the same stream prefix the renderer does, letting statistical tests run
//! the sampler alone.

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point2};
use crate::image::Image;
use crate::rng::Rng;

use super::{Direction, FrameMeta, LabeledFrame, Placement, SceneParams};

/// Skin tone the hand and one guaranteed distractor are drawn with.
const SKIN_BASE: [f32; 3] = [0.87, 0.64, 0.52];

/// Hand proportions relative to the sampled size unit `s` (pixels):
/// palm ellipse radii, finger capsule offset/length/radius. The capsule tip
/// defines the fingertip; the joint sits 55% of the capsule length behind it.
const PALM_R_ALONG: f64 = 1.0;
const PALM_R_PERP: f64 = 0.75;
const FINGER_BASE_OFFSET: f64 = 0.6;
const FINGER_LENGTH: f64 = 1.6;
const FINGER_RADIUS: f64 = 0.28;
const JOINT_FRACTION: f64 = 0.55;

const PLACEMENT_ATTEMPTS: u32 = 100;
const DIRECTION_JITTER_DEG: f64 = 12.0;

/// Values drawn before any rendering happens; the statistical contracts of
/// the generator are all about these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameParams {
    /// Accepted hand bounding-box center.
    pub center: Point2,
    pub direction: Direction,
    /// Finger direction in degrees (y-down convention), jitter included.
    pub angle_deg: f64,
    pub dark: bool,
    pub dark_factor: f64,
    /// Hand size unit as a fraction of the smaller image dimension.
    pub hand_scale: f64,
}

/// Analytic hand model of one frame. All labels derive from it, which is
/// what lets augmentation tests re-derive transformed labels exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandGeometry {
    pub palm_center: Point2,
    /// (radius along finger direction, radius perpendicular to it)
    pub palm_radii: (f64, f64),
    pub angle_deg: f64,
    pub finger_p0: Point2,
    pub finger_p1: Point2,
    pub finger_radius: f64,
    pub fingertip: Point2,
    pub joint: Point2,
    /// Tight analytic bounds of palm plus finger capsule.
    pub bounds: BBox,
}

/// Hand model for a palm center, finger angle, and size unit in pixels.
pub(crate) fn hand_geometry(palm_center: Point2, angle_deg: f64, s: f64) -> HandGeometry {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let at = |origin: Point2, dist: f64| Point2::new(origin.x + dist * cos, origin.y + dist * sin);

    let (ra, rb) = (PALM_R_ALONG * s, PALM_R_PERP * s);
    let p0 = at(palm_center, FINGER_BASE_OFFSET * s);
    let p1 = at(p0, FINGER_LENGTH * s);
    let rf = FINGER_RADIUS * s;
    let fingertip = at(p1, rf);
    let capsule_len = FINGER_LENGTH * s + 2.0 * rf;
    let joint = at(fingertip, -JOINT_FRACTION * capsule_len);

    // Rotated-ellipse extents, then union with the capsule's disk bounds.
    let ex = ((ra * cos).powi(2) + (rb * sin).powi(2)).sqrt();
    let ey = ((ra * sin).powi(2) + (rb * cos).powi(2)).sqrt();
    let bounds = BBox::new(
        (palm_center.x - ex).min(p0.x.min(p1.x) - rf),
        (palm_center.y - ey).min(p0.y.min(p1.y) - rf),
        (palm_center.x + ex).max(p0.x.max(p1.x) + rf),
        (palm_center.y + ey).max(p0.y.max(p1.y) + rf),
    );
    HandGeometry {
        palm_center,
        palm_radii: (ra, rb),
        angle_deg,
        finger_p0: p0,
        finger_p1: p1,
        finger_radius: rf,
        fingertip,
        joint,
        bounds,
    }
}

impl HandGeometry {
    pub fn contains(&self, p: Point2) -> bool {
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let ux = p.x - self.palm_center.x;
        let uy = p.y - self.palm_center.y;
        let along = ux * cos + uy * sin;
        let perp = -ux * sin + uy * cos;
        let (ra, rb) = self.palm_radii;
        if (along / ra).powi(2) + (perp / rb).powi(2) <= 1.0 {
            return true;
        }
        segment_distance(p, self.finger_p0, self.finger_p1) <= self.finger_radius
    }
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    Point2::new(a.x + t * abx, a.y + t * aby).distance(p)
}

/// Runs only the sampling prefix of frame generation. Cheap enough to call
/// tens of thousands of times for distribution checks.
pub fn sample_frame_params(params: &SceneParams, index: u64) -> Result<FrameParams> {
    params.validate()?;
    let mut rng = Rng::for_index(params.seed, "frame", index);
    sample_core(params, &mut rng)
}

fn sample_core(params: &SceneParams, rng: &mut Rng) -> Result<FrameParams> {
    let (w, h) = (params.image_size.0 as f64, params.image_size.1 as f64);
    let hand_scale = rng.uniform_in(params.hand_scale_range.0, params.hand_scale_range.1);

    let total = params.left_weight + params.up_weight + params.right_weight;
    let pick = rng.uniform() * total;
    let (direction, base_angle) = if pick < params.left_weight {
        (Direction::Left, 180.0)
    } else if pick < params.left_weight + params.up_weight {
        (Direction::Up, -90.0)
    } else {
        (Direction::Right, 0.0)
    };
    let angle_deg = base_angle + rng.uniform_in(-DIRECTION_JITTER_DEG, DIRECTION_JITTER_DEG);

    let dark = rng.bernoulli(params.dark_fraction);
    let dark_factor = rng.uniform_in(0.25, 0.45);

    // Admissible region for the box center: the whole analytic hand box must
    // lie inside the frame.
    let s = hand_scale * w.min(h);
    let rel = hand_geometry(Point2::new(0.0, 0.0), angle_deg, s);
    let (half_w, half_h) = (rel.bounds.width() / 2.0, rel.bounds.height() / 2.0);

    for _ in 0..PLACEMENT_ATTEMPTS {
        let candidate = match params.placement {
            Placement::Gaussian => Point2::new(
                params.location_mean.x + params.location_sigma.0 * rng.gaussian(),
                params.location_mean.y + params.location_sigma.1 * rng.gaussian(),
            ),
            Placement::Uniform => Point2::new(rng.uniform_in(0.0, w), rng.uniform_in(0.0, h)),
        };
        if candidate.x >= half_w
            && candidate.x <= w - half_w
            && candidate.y >= half_h
            && candidate.y <= h - half_h
        {
            return Ok(FrameParams { center: candidate, direction, angle_deg, dark, dark_factor, hand_scale });
        }
    }
    Err(Error::Placement { attempts: PLACEMENT_ATTEMPTS })
}

pub fn generate_frame(params: &SceneParams, index: u64) -> Result<LabeledFrame> {
    Ok(generate_frame_detailed(params, index)?.0)
}

/// Like [`generate_frame`] but also returns the analytic hand model.
pub fn generate_frame_detailed(params: &SceneParams, index: u64) -> Result<(LabeledFrame, HandGeometry)> {
    params.validate()?;
    let mut rng = Rng::for_index(params.seed, "frame", index);
    let core = sample_core(params, &mut rng)?;

    // Position the palm so the analytic box center lands on the sampled
    // center.
    let s = core.hand_scale * (params.image_size.0.min(params.image_size.1) as f64);
    let rel = hand_geometry(Point2::new(0.0, 0.0), core.angle_deg, s);
    let offset = rel.bounds.center();
    let palm_center = Point2::new(core.center.x - offset.x, core.center.y - offset.y);
    let geometry = hand_geometry(palm_center, core.angle_deg, s);

    let (image, hand_box) = render(params, &core, &geometry, &mut rng)?;
    let frame = LabeledFrame {
        image,
        hand_box,
        fingertip: geometry.fingertip,
        joint: geometry.joint,
        meta: FrameMeta { dark: core.dark, dir: core.direction },
    };
    Ok((frame, geometry))
}

struct Distractor {
    /// 0 disk, 1 axis-aligned rectangle, 2 rotated ellipse
    kind: u8,
    center: Point2,
    r1: f64,
    r2: f64,
    angle_deg: f64,
    color: [f32; 3],
}

impl Distractor {
    fn contains(&self, p: Point2) -> bool {
        let ux = p.x - self.center.x;
        let uy = p.y - self.center.y;
        match self.kind {
            0 => (ux * ux + uy * uy).sqrt() <= self.r1,
            1 => ux.abs() <= self.r1 && uy.abs() <= self.r2,
            _ => {
                let (sin, cos) = self.angle_deg.to_radians().sin_cos();
                let along = ux * cos + uy * sin;
                let perp = -ux * sin + uy * cos;
                (along / self.r1).powi(2) + (perp / self.r2).powi(2) <= 1.0
            }
        }
    }

    fn bounds(&self) -> BBox {
        let r = self.r1.max(self.r2);
        BBox::new(self.center.x - r, self.center.y - r, self.center.x + r, self.center.y + r)
    }
}

fn render(params: &SceneParams, core: &FrameParams, geometry: &HandGeometry, rng: &mut Rng) -> Result<(Image, BBox)> {
    let (w, h) = params.image_size;
    let min_dim = w.min(h) as f64;

    // Background: linear blend between two muted colors along a random mix
    // of the axes.
    let c0: [f32; 3] = std::array::from_fn(|_| rng.uniform_in(0.05, 0.55) as f32);
    let c1: [f32; 3] = std::array::from_fn(|_| rng.uniform_in(0.05, 0.55) as f32);
    let mix = rng.uniform();
    let mut data = vec![0.0f32; 3 * w * h];
    let plane = w * h;
    for y in 0..h {
        for x in 0..w {
            let t = (mix * (x as f64 + 0.5) / w as f64 + (1.0 - mix) * (y as f64 + 0.5) / h as f64) as f32;
            for c in 0..3 {
                data[c * plane + y * w + x] = c0[c] + (c1[c] - c0[c]) * t;
            }
        }
    }

    // Distractor shapes; the first is always skin-colored so hand detection
    // cannot reduce to color matching.
    let count = rng.uniform_int(params.distractor_count_range.0 as i64, params.distractor_count_range.1 as i64);
    for k in 0..count {
        let color: [f32; 3] = if k == 0 {
            std::array::from_fn(|c| SKIN_BASE[c] + rng.uniform_in(-0.06, 0.06) as f32)
        } else {
            std::array::from_fn(|_| rng.uniform() as f32)
        };
        let d = Distractor {
            kind: rng.uniform_int(0, 2) as u8,
            center: Point2::new(rng.uniform_in(0.0, w as f64), rng.uniform_in(0.0, h as f64)),
            r1: rng.uniform_in(0.05, 0.18) * min_dim,
            r2: rng.uniform_in(0.05, 0.18) * min_dim,
            angle_deg: rng.uniform_in(0.0, 360.0),
            color,
        };
        rasterize(&mut data, w, h, &d.bounds(), |p| d.contains(p), d.color);
    }

    // Hand, tracking the tight pixel box.
    let skin: [f32; 3] = std::array::from_fn(|c| SKIN_BASE[c] + rng.uniform_in(-0.05, 0.05) as f32);
    let mut tight: Option<(usize, usize, usize, usize)> = None;
    {
        let (x_lo, x_hi, y_lo, y_hi) = clip_bounds(&geometry.bounds, w, h);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
                if geometry.contains(p) {
                    for c in 0..3 {
                        data[c * plane + y * w + x] = skin[c];
                    }
                    tight = Some(match tight {
                        None => (x, x, y, y),
                        Some((x1, x2, y1, y2)) => (x1.min(x), x2.max(x), y1.min(y), y2.max(y)),
                    });
                }
            }
        }
    }
    let (x1, x2, y1, y2) = tight.ok_or(Error::Placement { attempts: PLACEMENT_ATTEMPTS })?;
    let hand_box = BBox::new(x1 as f64, y1 as f64, (x2 + 1) as f64, (y2 + 1) as f64);

    if core.dark {
        let f = core.dark_factor as f32;
        for v in &mut data {
            *v *= f;
        }
    }
    for v in &mut data {
        *v += rng.uniform_in(-0.02, 0.02) as f32;
    }
    Ok((Image::new(w, h, data)?, hand_box))
}

fn clip_bounds(b: &BBox, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let x_lo = b.x1.floor().max(0.0) as usize;
    let y_lo = b.y1.floor().max(0.0) as usize;
    let x_hi = (b.x2.ceil().max(0.0) as usize).min(w);
    let y_hi = (b.y2.ceil().max(0.0) as usize).min(h);
    (x_lo, x_hi, y_lo, y_hi)
}

fn rasterize(data: &mut [f32], w: usize, h: usize, bounds: &BBox, inside: impl Fn(Point2) -> bool, color: [f32; 3]) {
    let plane = w * h;
    let (x_lo, x_hi, y_lo, y_hi) = clip_bounds(bounds, w, h);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            if inside(Point2::new(x as f64 + 0.5, y as f64 + 0.5)) {
                for c in 0..3 {
                    data[c * plane + y * w + x] = color[c];
                }
            }
        }
    }
}
