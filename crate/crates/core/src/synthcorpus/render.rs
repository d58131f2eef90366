//! Category silhouettes and textures.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{hsv_to_rgb, Image};
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Solid,
    Stripes,
    Dots,
}

/// Silhouette family used for a category name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Silhouette {
    /// Trapezoid widening towards the hem.
    Top,
    /// Two legs joined by a waistband.
    Bottom,
    /// A pair of ellipses.
    Shoe,
    /// Rounded rectangle with an arched handle.
    Bag,
    /// Fallbacks for other category names.
    Diamond,
    Disc,
}

impl Silhouette {
    pub fn for_category(name: &str, position: usize) -> Self {
        match name {
            "top" => Self::Top,
            "bottom" => Self::Bottom,
            "shoe" => Self::Shoe,
            "bag" => Self::Bag,
            _ if position % 2 == 0 => Self::Diamond,
            _ => Self::Disc,
        }
    }

    /// Whether normalized point `(x, y)` (both in `[0, 1]`, origin top-left)
    /// is inside the silhouette.
    pub fn contains(self, x: f32, y: f32) -> bool {
        match self {
            Self::Top => {
                if !(0.15..=0.85).contains(&y) {
                    return false;
                }
                let t = (y - 0.15) / 0.7;
                (x - 0.5).abs() <= 0.2 + 0.12 * t
            }
            Self::Bottom => {
                let band = (0.12..=0.22).contains(&y) && (0.26..=0.74).contains(&x);
                let legs = (0.12..=0.9).contains(&y)
                    && ((0.26..=0.46).contains(&x) || (0.54..=0.74).contains(&x));
                band || legs
            }
            Self::Shoe => {
                let e = |cx: f32| ((x - cx) / 0.18).powi(2) + ((y - 0.62) / 0.11).powi(2) <= 1.0;
                e(0.29) || e(0.71)
            }
            Self::Bag => {
                let (x0, x1, y0, y1, r) = (0.18, 0.82, 0.42, 0.86, 0.08);
                let body = if (x0..=x1).contains(&x) && (y0..=y1).contains(&y) {
                    let cx = x.clamp(x0 + r, x1 - r);
                    let cy = y.clamp(y0 + r, y1 - r);
                    (x - cx).powi(2) + (y - cy).powi(2) <= r * r
                } else {
                    false
                };
                let d = ((x - 0.5).powi(2) + (y - 0.42).powi(2)).sqrt();
                let handle = y <= 0.42 && (0.14..=0.2).contains(&d);
                body || handle
            }
            Self::Diamond => (x - 0.5).abs() + (y - 0.5).abs() <= 0.36,
            Self::Disc => (x - 0.5).powi(2) + (y - 0.5).powi(2) <= 0.33f32.powi(2),
        }
    }
}

/// Everything needed to draw one item, sampled up front so rendering is a
/// pure function.
#[derive(Debug, Clone, Copy)]
pub struct ItemLook {
    pub silhouette: Silhouette,
    /// Hue in degrees, saturation and value in `[0, 1]`.
    pub hsv: [f32; 3],
    pub texture: Texture,
    /// Placement jitter: offset in normalized units and scale factor.
    pub dx: f32,
    pub dy: f32,
    pub scale: f32,
    /// Stripe/dot period in normalized units.
    pub period: f32,
}

impl ItemLook {
    fn base_rgb(&self) -> [f32; 3] {
        hsv_to_rgb([self.hsv[0] / 360.0, self.hsv[1], self.hsv[2]])
    }

    /// Same hue, darker shade: texture never moves an item's hue.
    fn accent_rgb(&self) -> [f32; 3] {
        hsv_to_rgb([self.hsv[0] / 360.0, self.hsv[1], self.hsv[2] * 0.55])
    }
}

/// Renders on a white background and adds clipped Gaussian noise.
pub fn render_item(look: &ItemLook, size: usize, noise_std: f32, rng: &mut Rng) -> Image {
    let base = look.base_rgb();
    let accent = look.accent_rgb();
    let mut px = vec![1.0f32; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let nx = (x as f32 + 0.5) / size as f32;
            let ny = (y as f32 + 0.5) / size as f32;
            let ux = (nx - 0.5 - look.dx) / look.scale + 0.5;
            let uy = (ny - 0.5 - look.dy) / look.scale + 0.5;
            if !look.silhouette.contains(ux, uy) {
                continue;
            }
            let marked = match look.texture {
                Texture::Solid => false,
                Texture::Stripes => ((ux + uy) / look.period).rem_euclid(1.0) < 0.4,
                Texture::Dots => {
                    let fx = (ux / look.period).rem_euclid(1.0) - 0.5;
                    let fy = (uy / look.period).rem_euclid(1.0) - 0.5;
                    fx * fx + fy * fy < 0.09
                }
            };
            let rgb = if marked { accent } else { base };
            px[(y * size + x) * 3..][..3].copy_from_slice(&rgb);
        }
    }
    if noise_std > 0.0 {
        let normal = Normal::new(0.0f32, noise_std).expect("finite std");
        for v in &mut px {
            *v += normal.sample(rng);
        }
    }
    Image::from_unclipped(size, size, px).quantized()
}

pub(crate) fn sample_placement(max_offset: f32, scale: [f32; 2], rng: &mut Rng) -> (f32, f32, f32) {
    (
        rng.random_range(-max_offset..=max_offset),
        rng.random_range(-max_offset..=max_offset),
        rng.random_range(scale[0]..=scale[1]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(s: Silhouette, n: usize) -> Vec<bool> {
        (0..n * n)
            .map(|i| s.contains(((i % n) as f32 + 0.5) / n as f32, ((i / n) as f32 + 0.5) / n as f32))
            .collect()
    }

    #[test]
    fn silhouettes_differ() {
        let all = [
            Silhouette::Top,
            Silhouette::Bottom,
            Silhouette::Shoe,
            Silhouette::Bag,
            Silhouette::Diamond,
            Silhouette::Disc,
        ];
        for (i, a) in all.iter().enumerate() {
            let ma = mask(*a, 64);
            assert!(ma.iter().filter(|&&v| v).count() > 200, "{a:?} too small");
            for b in &all[i + 1..] {
                assert_ne!(ma, mask(*b, 64), "{a:?} vs {b:?}");
            }
        }
    }
}
