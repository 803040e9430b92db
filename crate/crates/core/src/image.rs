//! RGB image carrier and the resampling operations of the pipeline.
//!
//! Pixels are 32-bit reals in [0, 1], stored planar (channel, row, column).
//! All resampling is bilinear with edge-clamped taps under the pixel-center
//! convention: integer coordinate (x, y) addresses the center of pixel
//! (x, y), and an image of width w covers the continuous range [0, w].

use crate::error::{Error, Result};
use crate::geometry::{BBox, PatchTransform, Point2, Translation};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Planar RGB: `data[c * width * height + y * width + x]`.
    data: Vec<f32>,
}

impl Image {
    /// Builds from planar data, clamping every value into [0, 1].
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput("image dimensions must be >= 1"));
        }
        if data.len() != 3 * width * height {
            return Err(Error::EmptyInput("image data length must be 3 * width * height"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, fill: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            data.extend(std::iter::repeat_n(fill[c].clamp(0.0, 1.0), width * height));
        }
        Self { width, height, data }
    }

    /// Converts interleaved 8-bit RGB rows into the planar real carrier.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(Error::EmptyInput("rgb8 buffer length must be 3 * width * height"));
        }
        let plane = width * height;
        let mut data = vec![0.0f32; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                data[c * plane + i] = rgb[3 * i + c] as f32 / 255.0;
            }
        }
        Ok(Self { width, height, data })
    }

    /// Interleaved 8-bit RGB with round-to-nearest quantization. Inverse of
    /// [`Image::from_rgb8`] on 8-bit-representable values.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                out[3 * i + c] = (self.data[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[c * self.width * self.height + y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Per-channel mean.
    pub fn channel_means(&self) -> [f32; 3] {
        let plane = self.width * self.height;
        let mut means = [0.0f32; 3];
        for c in 0..3 {
            let sum: f64 = self.data[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum();
            means[c] = (sum / plane as f64) as f32;
        }
        means
    }

    /// Bilinear sample at a continuous pixel-center coordinate, taps clamped
    /// to the image border.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let xi = x0 as i64;
        let yi = y0 as i64;
        let cx = |v: i64| v.clamp(0, self.width as i64 - 1) as usize;
        let cy = |v: i64| v.clamp(0, self.height as i64 - 1) as usize;
        let (x0, x1) = (cx(xi), cx(xi + 1));
        let (y0, y1) = (cy(yi), cy(yi + 1));
        let v00 = self.get(c, x0, y0);
        let v10 = self.get(c, x1, y0);
        let v01 = self.get(c, x0, y1);
        let v11 = self.get(c, x1, y1);
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        top + (bottom - top) * fy
    }
}

/// Anisotropic bilinear resize. Returns the image and the label scale pair
/// `(sx, sy) = (new_w / w, new_h / h)`.
pub fn resize_image(img: &Image, size: (usize, usize)) -> (Image, (f64, f64)) {
    let (tw, th) = size;
    assert!(tw >= 1 && th >= 1, "target size must be >= 1x1");
    let sx = tw as f64 / img.width() as f64;
    let sy = th as f64 / img.height() as f64;
    let mut out = Image::filled(tw, th, [0.0; 3]);
    for c in 0..3 {
        for y in 0..th {
            let src_y = (y as f64 + 0.5) / sy - 0.5;
            for x in 0..tw {
                let src_x = (x as f64 + 0.5) / sx - 0.5;
                out.set(c, x, y, img.sample(c, src_x, src_y));
            }
        }
    }
    (out, (sx, sy))
}

/// Shifts content by a whole-pixel offset; pixels with no source hold `fill`.
pub fn translate_image(img: &Image, t: Translation, fill: [f32; 3]) -> Image {
    let mut out = Image::filled(img.width(), img.height(), fill);
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in 0..h {
        let sy = y - t.dy;
        if sy < 0 || sy >= h {
            continue;
        }
        for x in 0..w {
            let sx = x - t.dx;
            if sx < 0 || sx >= w {
                continue;
            }
            for c in 0..3 {
                let v = img.get(c, sx as usize, sy as usize);
                out.set(c, x as usize, y as usize, v);
            }
        }
    }
    out
}

/// Shifts content so the box center lands on the image center (to within the
/// 0.5 px integer-offset quantization). Vacated pixels hold `fill`. Output
/// dimensions equal input dimensions.
pub fn centralize(img: &Image, box_: &BBox, fill: [f32; 3]) -> (Image, Translation) {
    let image_center = Point2::new(img.width() as f64 / 2.0, img.height() as f64 / 2.0);
    let t = Translation::between_centers(box_.center(), image_center);
    (translate_image(img, t, fill), t)
}

/// Cuts `box_` out of the frame, resampled to `size`. Samples falling outside
/// the frame's continuous bounds take `fill`. The returned transform maps
/// points between frame and patch coordinates.
pub fn crop_resize(img: &Image, box_: &BBox, size: (usize, usize), fill: [f32; 3]) -> Result<(Image, PatchTransform)> {
    if !(box_.area() > 0.0) || !box_.is_valid() {
        return Err(Error::DegenerateCrop);
    }
    let (tw, th) = size;
    assert!(tw >= 1 && th >= 1, "target size must be >= 1x1");
    let transform = PatchTransform { source_box: *box_, target_size: size };
    let (sx, sy) = transform.scale();
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut out = Image::filled(tw, th, fill);
    for y in 0..th {
        let src_y = box_.y1 + (y as f64 + 0.5) / sy;
        for x in 0..tw {
            let src_x = box_.x1 + (x as f64 + 0.5) / sx;
            if src_x < 0.0 || src_x > w || src_y < 0.0 || src_y > h {
                continue;
            }
            for c in 0..3 {
                out.set(c, x, y, img.sample(c, src_x - 0.5, src_y - 0.5));
            }
        }
    }
    Ok((out, transform))
}

/// Similarity warp about `center`: scale then rotate by `angle_deg`. Positive
/// angles turn the +x axis toward +y (clockwise on screen with y down).
/// Out-of-frame samples take `fill`.
pub fn warp_similarity(img: &Image, center: Point2, scale: f64, angle_deg: f64, fill: [f32; 3]) -> Image {
    assert!(scale > 0.0, "warp scale must be positive");
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = Image::filled(img.width(), img.height(), fill);
    let (w, h) = (img.width() as f64, img.height() as f64);
    for y in 0..img.height() {
        for x in 0..img.width() {
            // Inverse map of the output pixel center: rotate by -angle, unscale.
            let rx = x as f64 + 0.5 - center.x;
            let ry = y as f64 + 0.5 - center.y;
            let ux = (rx * cos + ry * sin) / scale + center.x;
            let uy = (-rx * sin + ry * cos) / scale + center.y;
            if ux < 0.0 || ux > w || uy < 0.0 || uy > h {
                continue;
            }
            for c in 0..3 {
                out.set(c, x, y, img.sample(c, ux - 0.5, uy - 0.5));
            }
        }
    }
    out
}

/// Forward point map of [`warp_similarity`].
pub fn warp_point(center: Point2, scale: f64, angle_deg: f64, p: Point2) -> Point2 {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let rx = (p.x - center.x) * scale;
    let ry = (p.y - center.y) * scale;
    Point2::new(center.x + rx * cos - ry * sin, center.y + rx * sin + ry * cos)
}
