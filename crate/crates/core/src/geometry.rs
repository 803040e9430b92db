//! Coordinate-space machinery shared by the cascade: boxes and IoU, the
//! integer-pixel centralization offset, and the patch transform that maps
//! points between frame and crop coordinates.
//!
//! Boxes are half-open rectangles `[x1, x2) x [y1, y2)` in continuous pixel
//! coordinates, origin at the top-left, y downward. The rasterization view of
//! that convention: a pixel belongs to a box iff its center does.

use serde::{Deserialize, Serialize};

/// Continuous pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Half-open axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Box spanning two arbitrary corner points, reordered as needed.
    pub fn from_corners(a: Point2, b: Point2) -> Self {
        Self { x1: a.x.min(b.x), y1: a.y.min(b.y), x2: a.x.max(b.x), y2: a.y.max(b.y) }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        Point2::new((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1.is_finite()
            && self.y1.is_finite()
            && self.x2.is_finite()
            && self.y2.is_finite()
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x1 && p.x < self.x2 && p.y >= self.y1 && p.y < self.y2
    }

    /// Grows every side outward by `fraction` of the corresponding dimension
    /// (negative shrinks).
    pub fn inflate(&self, fraction: f64) -> Self {
        let (mx, my) = (self.width() * fraction, self.height() * fraction);
        Self { x1: self.x1 - mx, y1: self.y1 - my, x2: self.x2 + mx, y2: self.y2 + my }
    }

    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        Self { x1: self.x1 + dx, y1: self.y1 + dy, x2: self.x2 + dx, y2: self.y2 + dy }
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self { x1: self.x1 * sx, y1: self.y1 * sy, x2: self.x2 * sx, y2: self.y2 * sy }
    }
}

/// IoU plus the degeneracy flag for zero-area inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouResult {
    pub value: f64,
    /// True when either input had non-positive area; `value` is then 0.
    pub degenerate: bool,
}

/// Intersection over union of two boxes. Degenerate input yields 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_detailed(a, b).value
}

pub fn iou_detailed(a: &BBox, b: &BBox) -> IouResult {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return IouResult { value: 0.0, degenerate: true };
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    IouResult { value: inter / union, degenerate: false }
}

/// Integer pixel offset applied to image content. Integer-valued so the
/// inverse map is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    pub dx: i64,
    pub dy: i64,
}

impl Translation {
    pub fn new(dx: i64, dy: i64) -> Self {
        Self { dx, dy }
    }

    /// Offset that moves `from` onto `to`, rounded to whole pixels.
    pub fn between_centers(from: Point2, to: Point2) -> Self {
        Self { dx: (to.x - from.x).round() as i64, dy: (to.y - from.y).round() as i64 }
    }

    pub fn invert(&self) -> Self {
        Self { dx: -self.dx, dy: -self.dy }
    }

    pub fn apply_point(&self, p: Point2) -> Point2 {
        Point2::new(p.x + self.dx as f64, p.y + self.dy as f64)
    }

    pub fn apply_box(&self, b: &BBox) -> BBox {
        b.shifted(self.dx as f64, self.dy as f64)
    }
}

/// Linear map between frame coordinates and the coordinates of a patch cut
/// from `source_box` and resampled to `target_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchTransform {
    pub source_box: BBox,
    pub target_size: (usize, usize),
}

impl PatchTransform {
    /// Scale factors (sx, sy) = target / source extent.
    pub fn scale(&self) -> (f64, f64) {
        (
            self.target_size.0 as f64 / self.source_box.width(),
            self.target_size.1 as f64 / self.source_box.height(),
        )
    }

    pub fn to_patch(&self, p: Point2) -> Point2 {
        let (sx, sy) = self.scale();
        Point2::new((p.x - self.source_box.x1) * sx, (p.y - self.source_box.y1) * sy)
    }

    pub fn to_frame(&self, p: Point2) -> Point2 {
        let (sx, sy) = self.scale();
        Point2::new(p.x / sx + self.source_box.x1, p.y / sy + self.source_box.y1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let a = BBox::new(3.0, 4.0, 10.0, 12.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &b), 0.0);
        assert!(!iou_detailed(&a, &b).degenerate);
    }

    #[test]
    fn iou_half_overlap_case() {
        // intersection 50, union 150
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert_eq!(iou(&a, &b), 1.0 / 3.0);
        assert_eq!(iou(&b, &a), 1.0 / 3.0);
    }

    #[test]
    fn degenerate_box_is_flagged() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let line = BBox::new(5.0, 5.0, 5.0, 9.0);
        let r = iou_detailed(&a, &line);
        assert_eq!(r.value, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn iou_is_translation_invariant() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 2.0, 15.0, 9.0);
        let base = iou(&a, &b);
        for (dx, dy) in [(3.0, -7.0), (-120.5, 44.25)] {
            assert_eq!(iou(&a.shifted(dx, dy), &b.shifted(dx, dy)), base);
        }
    }

    #[test]
    fn corner_reordering() {
        let b = BBox::from_corners(Point2::new(10.0, 2.0), Point2::new(3.0, 8.0));
        assert_eq!(b, BBox::new(3.0, 2.0, 10.0, 8.0));
        assert!(b.is_valid());
    }

    #[test]
    fn translation_examples() {
        let id = Translation::new(0, 0);
        let p = Point2::new(10.0, 20.0);
        assert_eq!(id.apply_point(p), p);

        let t = Translation::new(-30, -30);
        assert_eq!(t.apply_point(p), Point2::new(-20.0, -10.0));

        // round trip is exact for arbitrary points
        let q = Point2::new(123.4375, -9.25);
        let t2 = Translation::new(-17, 523);
        assert_eq!(t2.invert().apply_point(t2.apply_point(q)), q);
    }

    #[test]
    fn patch_transform_maps_both_ways() {
        let pt = PatchTransform { source_box: BBox::new(0.0, 0.0, 10.0, 10.0), target_size: (20, 20) };
        let back = pt.to_frame(Point2::new(10.0, 10.0));
        assert_eq!(back, Point2::new(5.0, 5.0));

        let p = Point2::new(7.125, 3.5);
        let round = pt.to_frame(pt.to_patch(p));
        assert!(p.distance(round) < 1e-4);
    }
}
