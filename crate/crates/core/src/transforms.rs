//! Shape and appearance perturbations for the consistency loss.
//!
//! The shape transform moves geometry only (rotation, shear, zoom with a
//! centre crop) and leaves colour and texture intact. The appearance
//! transform changes colour (jitter, grayscale) and framing (random resized
//! crop) while keeping the silhouette recognisable.
//!
//! Each transform is split into a sampling step producing a plain parameter
//! record and a deterministic application step, so any draw can be replayed.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{hsv_to_rgb, luma, rgb_to_hsv, Image};
use crate::{Error, Result, Rng};

/// Background colour exposed by geometry changes.
pub const FILL: [f32; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeTransformParams {
    /// Rotation drawn uniformly from `[-max_rotation_deg, max_rotation_deg]`.
    pub max_rotation_deg: f32,
    /// Largest shear displacement per axis, as a fraction of the image side.
    pub max_shear_frac: f32,
    /// Zoom drawn uniformly from this range before the centre crop.
    pub scale_range: [f32; 2],
}

impl Default for ShapeTransformParams {
    fn default() -> Self {
        Self {
            max_rotation_deg: 5.0,
            max_shear_frac: 30.0 / 224.0,
            scale_range: [1.0, 1.2],
        }
    }
}

impl ShapeTransformParams {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(self.max_rotation_deg >= 0.0 && self.max_shear_frac >= 0.0 && lo > 0.0 && lo <= hi) {
            return Err(Error::Parameter(format!("invalid shape transform parameters {self:?}")));
        }
        Ok(())
    }

    /// Parameters whose every draw is the identity.
    pub fn identity() -> Self {
        Self {
            max_rotation_deg: 0.0,
            max_shear_frac: 0.0,
            scale_range: [1.0, 1.0],
        }
    }
}

/// One concrete geometric perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeDraw {
    pub rotation_deg: f32,
    pub shear_x: f32,
    pub shear_y: f32,
    pub scale: f32,
}

pub fn sample_shape(params: &ShapeTransformParams, rng: &mut Rng) -> ShapeDraw {
    let sym = |rng: &mut Rng, m: f32| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let rotation_deg = sym(rng, params.max_rotation_deg);
    let shear_x = sym(rng, params.max_shear_frac);
    let shear_y = sym(rng, params.max_shear_frac);
    let [lo, hi] = params.scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    ShapeDraw {
        rotation_deg,
        shear_x,
        shear_y,
        scale,
    }
}

/// Bilinear sample at continuous pixel coordinates; outside the frame reads
/// as [`FILL`].
fn sample_bilinear(image: &Image, y: f32, x: f32) -> [f32; 3] {
    let (h, w) = (image.height() as f32, image.width() as f32);
    if !(y > -1.0 && y < h && x > -1.0 && x < w) {
        return FILL;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let fetch = |yy: f32, xx: f32| {
        if yy < 0.0 || xx < 0.0 || yy >= h || xx >= w {
            FILL
        } else {
            image.get(yy as usize, xx as usize)
        }
    };
    let p00 = fetch(y0, x0);
    if fy == 0.0 && fx == 0.0 {
        return p00;
    }
    let p01 = fetch(y0, x0 + 1.0);
    let p10 = fetch(y0 + 1.0, x0);
    let p11 = fetch(y0 + 1.0, x0 + 1.0);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p01[c] * fx;
        let bottom = p10[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Applies rotation, shear and zoom about the image centre; the output keeps
/// the input size, which amounts to a centre crop of the zoomed image.
pub fn apply_shape(image: &Image, draw: &ShapeDraw) -> Image {
    let (h, w) = (image.height(), image.width());
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (sin, cos) = draw.rotation_deg.to_radians().sin_cos();
    // forward map: M = scale * R * S with S = [[1, kx], [ky, 1]]
    let kx = draw.shear_x * w as f32 / h as f32;
    let ky = draw.shear_y * h as f32 / w as f32;
    let m = [
        [draw.scale * (cos - sin * ky), draw.scale * (cos * kx - sin)],
        [draw.scale * (sin + cos * ky), draw.scale * (sin * kx + cos)],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let mut px = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f32 - cx, y as f32 - cy);
            let sx = inv[0][0] * u + inv[0][1] * v + cx;
            let sy = inv[1][0] * u + inv[1][1] * v + cy;
            px.extend_from_slice(&sample_bilinear(image, sy, sx));
        }
    }
    Image::from_unclipped(h, w, px)
}

pub fn shape_transform(image: &Image, params: &ShapeTransformParams, rng: &mut Rng) -> Image {
    apply_shape(image, &sample_shape(params, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceTransformParams {
    pub grayscale_prob: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Hue shift bound as a fraction of a full turn; at most 0.5.
    pub hue: f32,
    /// Crop area as a fraction of the image, drawn uniformly.
    pub crop_area: [f32; 2],
    /// Crop aspect ratio range (width / height), sampled log-uniformly.
    pub crop_aspect: [f32; 2],
}

impl Default for AppearanceTransformParams {
    fn default() -> Self {
        Self {
            grayscale_prob: 0.5,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            crop_area: [0.6, 1.0],
            crop_aspect: [3.0 / 4.0, 4.0 / 3.0],
        }
    }
}

impl AppearanceTransformParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.grayscale_prob)
            && self.brightness >= 0.0
            && self.contrast >= 0.0
            && self.saturation >= 0.0
            && (0.0..=0.5).contains(&self.hue)
            && self.crop_area[0] > 0.0
            && self.crop_area[0] <= self.crop_area[1]
            && self.crop_area[1] <= 1.0
            && self.crop_aspect[0] > 0.0
            && self.crop_aspect[0] <= self.crop_aspect[1];
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid appearance transform parameters {self:?}")))
        }
    }

    pub fn identity() -> Self {
        Self {
            grayscale_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            crop_area: [1.0, 1.0],
            crop_aspect: [1.0, 1.0],
        }
    }
}

/// One concrete appearance perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppearanceDraw {
    /// Crop window in pixels: top, left, height, width.
    pub crop: [usize; 4],
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Hue shift, fraction of a turn.
    pub hue_shift: f32,
    pub grayscale: bool,
}

fn factor(rng: &mut Rng, strength: f32) -> f32 {
    if strength > 0.0 {
        rng.random_range((1.0 - strength).max(0.0)..=1.0 + strength)
    } else {
        1.0
    }
}

pub fn sample_appearance(params: &AppearanceTransformParams, height: usize, width: usize, rng: &mut Rng) -> AppearanceDraw {
    let [a_lo, a_hi] = params.crop_area;
    let area = if a_hi > a_lo { rng.random_range(a_lo..=a_hi) } else { a_lo };
    let [r_lo, r_hi] = params.crop_aspect;
    let aspect = if r_hi > r_lo {
        rng.random_range(r_lo.ln()..=r_hi.ln()).exp()
    } else {
        r_lo
    };
    let total = (height * width) as f32 * area;
    let cw = ((total * aspect).sqrt().round() as usize).clamp(1, width);
    let ch = ((total / aspect).sqrt().round() as usize).clamp(1, height);
    let top = if height > ch { rng.random_range(0..=height - ch) } else { 0 };
    let left = if width > cw { rng.random_range(0..=width - cw) } else { 0 };

    let brightness = factor(rng, params.brightness);
    let contrast = factor(rng, params.contrast);
    let saturation = factor(rng, params.saturation);
    let hue_shift = if params.hue > 0.0 {
        rng.random_range(-params.hue..=params.hue)
    } else {
        0.0
    };
    let grayscale = params.grayscale_prob > 0.0 && rng.random::<f32>() < params.grayscale_prob;
    AppearanceDraw {
        crop: [top, left, ch, cw],
        brightness,
        contrast,
        saturation,
        hue_shift,
        grayscale,
    }
}

/// Crops `[top, left, height, width]` and resizes back to the full size
/// with bilinear interpolation (corner-aligned).
pub fn resized_crop(image: &Image, crop: [usize; 4]) -> Image {
    let (h, w) = (image.height(), image.width());
    let [top, left, ch, cw] = crop;
    if crop == [0, 0, h, w] {
        return image.clone();
    }
    let sy = if h > 1 { (ch as f32 - 1.0) / (h as f32 - 1.0) } else { 0.0 };
    let sx = if w > 1 { (cw as f32 - 1.0) / (w as f32 - 1.0) } else { 0.0 };
    let mut px = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let yy = top as f32 + y as f32 * sy;
            let xx = left as f32 + x as f32 * sx;
            px.extend_from_slice(&sample_bilinear(image, yy, xx));
        }
    }
    Image::from_unclipped(h, w, px)
}

pub fn adjust_brightness(image: &Image, f: f32) -> Image {
    let px = image.pixels().iter().map(|v| v * f).collect();
    Image::from_unclipped(image.height(), image.width(), px)
}

/// Blends towards the image's mean luma.
pub fn adjust_contrast(image: &Image, f: f32) -> Image {
    let n = (image.height() * image.width()) as f32;
    let mean = image.iter_rgb().map(luma).sum::<f32>() / n;
    let px = image.pixels().iter().map(|v| f * v + (1.0 - f) * mean).collect();
    Image::from_unclipped(image.height(), image.width(), px)
}

/// Blends each pixel towards its own luma.
pub fn adjust_saturation(image: &Image, f: f32) -> Image {
    let px = image
        .iter_rgb()
        .flat_map(|rgb| {
            let g = luma(rgb);
            rgb.map(|c| f * c + (1.0 - f) * g)
        })
        .collect();
    Image::from_unclipped(image.height(), image.width(), px)
}

pub fn adjust_hue(image: &Image, shift: f32) -> Image {
    let px = image
        .iter_rgb()
        .flat_map(|rgb| {
            let [h, s, v] = rgb_to_hsv(rgb);
            hsv_to_rgb([h + shift, s, v])
        })
        .collect();
    Image::from_unclipped(image.height(), image.width(), px)
}

/// Rec. 601 luma copied to all three channels.
pub fn to_grayscale(image: &Image) -> Image {
    let px = image
        .iter_rgb()
        .flat_map(|rgb| {
            let g = luma(rgb);
            [g, g, g]
        })
        .collect();
    Image::from_unclipped(image.height(), image.width(), px)
}

/// Crop, then brightness, contrast, saturation, hue, then grayscale. Steps
/// at their neutral value are skipped, so the neutral draw is the identity.
pub fn apply_appearance(image: &Image, draw: &AppearanceDraw) -> Image {
    let mut out = resized_crop(image, draw.crop);
    if draw.brightness != 1.0 {
        out = adjust_brightness(&out, draw.brightness);
    }
    if draw.contrast != 1.0 {
        out = adjust_contrast(&out, draw.contrast);
    }
    if draw.saturation != 1.0 {
        out = adjust_saturation(&out, draw.saturation);
    }
    if draw.hue_shift != 0.0 {
        out = adjust_hue(&out, draw.hue_shift);
    }
    if draw.grayscale {
        out = to_grayscale(&out);
    }
    out
}

pub fn appearance_transform(image: &Image, params: &AppearanceTransformParams, rng: &mut Rng) -> Image {
    let draw = sample_appearance(params, image.height(), image.width(), rng);
    apply_appearance(image, &draw)
}
