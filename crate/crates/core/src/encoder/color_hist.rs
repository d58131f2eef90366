use crate::dataset::{is_background, rgb_to_hsv, Image};

/// Pixels with every channel within this distance of 1.0 count as background.
pub const BACKGROUND_TOLERANCE: f32 = 0.02;

pub const DEFAULT_BINS: usize = 6;

/// Joint HSV histogram of an item's non-background pixels, `bins³` long and
/// L1-normalized. An image with no foreground maps to the uniform vector.
pub fn color_histogram_embed(image: &Image, bins_per_channel: usize) -> Vec<f64> {
    let bins = bins_per_channel.max(1);
    let len = bins * bins * bins;
    let mut hist = vec![0.0f64; len];
    let mut count = 0usize;
    let bin = |v: f32| ((v * bins as f32) as usize).min(bins - 1);
    for rgb in image.iter_rgb() {
        if is_background(rgb, BACKGROUND_TOLERANCE) {
            continue;
        }
        let [h, s, v] = rgb_to_hsv(rgb);
        hist[(bin(h) * bins + bin(s)) * bins + bin(v)] += 1.0;
        count += 1;
    }
    if count == 0 {
        return vec![1.0 / len as f64; len];
    }
    for v in &mut hist {
        *v /= count as f64;
    }
    hist
}


#[cfg(test)]
mod corpus_tests {
    use rand::Rng as _;

    use super::*;
    use crate::encoder::euclidean;
    use crate::rng_from_seed;
    use crate::synthcorpus::{generate_corpus, SynthSpec};

    #[test]
    fn same_theme_pairs_are_closer() {
        let spec = SynthSpec { n_outfits: 150, n_themes: 2, seed: 11, ..Default::default() };
        let (catalog, truth) = generate_corpus(&spec).unwrap();
        let hists: Vec<Vec<f64>> =
            catalog.items().iter().map(|i| color_histogram_embed(&i.image, DEFAULT_BINS)).collect();
        let theme: Vec<usize> = catalog.items().iter().map(|i| truth[&i.id]).collect();
        let mut rng = rng_from_seed(1);
        let n = hists.len();
        let (mut wins, mut trials) = (0, 0);
        while trials < 2000 {
            let (a, b, c) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
            if a == b || theme[a] != theme[b] || theme[a] == theme[c] {
                continue;
            }
            trials += 1;
            if euclidean(&hists[a], &hists[b]) < euclidean(&hists[a], &hists[c]) {
                wins += 1;
            }
        }
        let rate = wins as f64 / trials as f64;
        assert!(rate >= 0.95, "same-theme closer in {rate} of pairs");
    }
}
