//! Renders one item and writes it next to a few shape-perturbed and
//! appearance-perturbed views, as a PNG strip.
//!
//! ```bash
//! cargo run --release --example augmentations -- /tmp/views.png
//! ```

use outfit_compat::dataset::Image;
use outfit_compat::rng_from_seed;
use outfit_compat::synthcorpus::{render_item, ItemLook, Silhouette, Texture};
use outfit_compat::transforms::{
    apply_appearance, sample_appearance, shape_transform, AppearanceTransformParams, ShapeTransformParams,
};

const VIEWS: usize = 6;

fn main() -> outfit_compat::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("outfit-compat-views.png").display().to_string());
    let mut rng = rng_from_seed(3);
    let look = ItemLook {
        silhouette: Silhouette::for_category("top", 0),
        hsv: [210.0, 0.75, 0.8],
        texture: Texture::Stripes,
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
        period: 0.2,
    };
    let item = render_item(&look, 64, 0.0, &mut rng);

    let shape = ShapeTransformParams::default();
    let appearance = AppearanceTransformParams::default();
    let mut row_shape = vec![item.clone()];
    let mut row_appearance = vec![item.clone()];
    for _ in 0..VIEWS {
        row_shape.push(shape_transform(&item, &shape, &mut rng));
        let draw = sample_appearance(&appearance, 64, 64, &mut rng);
        println!(
            "appearance draw: crop {:?} brightness {:.2} contrast {:.2} saturation {:.2} hue {:+.3} grayscale {}",
            draw.crop, draw.brightness, draw.contrast, draw.saturation, draw.hue_shift, draw.grayscale
        );
        row_appearance.push(apply_appearance(&item, &draw));
    }

    let strip = tile(&[row_shape, row_appearance]);
    image::save_buffer(&out, &strip.to_rgb8(), strip.width() as u32, strip.height() as u32, image::ExtendedColorType::Rgb8)
        .expect("write png");
    println!("top row: shape views, bottom row: appearance views -> {out}");
    Ok(())
}

fn tile(rows: &[Vec<Image>]) -> Image {
    let (h, w) = (rows[0][0].height(), rows[0][0].width());
    let cols = rows[0].len();
    let mut px = vec![1.0f32; rows.len() * h * cols * w * 3];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let dst = ((r * h + y) * cols * w + c * w + x) * 3;
                    px[dst..dst + 3].copy_from_slice(&img.get(y, x));
                }
            }
        }
    }
    Image::new(rows.len() * h, cols * w, px).expect("valid tile")
}
