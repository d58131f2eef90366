//! Procedural catalog with a planted compatibility rule.
//!
//! Every outfit draws one colour theme; each of its items gets a hue within
//! the theme's tolerance band, a category-specific silhouette and an
//! independently sampled texture. Two items are compatible exactly when they
//! share a theme, which makes the ground truth an equivalence relation.

mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use render::{render_item, ItemLook, Silhouette, Texture};

use crate::dataset::{write_catalog, Catalog, Item, Outfit, SplitSpec};
use crate::{derive_seed, rng_from_seed, Error, Result, Rng};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Item id -> theme index.
pub type GroundTruth = BTreeMap<String, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorTheme {
    /// Degrees in `[0, 360)`.
    pub hue_center: f32,
    /// Half-width of the hue band, degrees.
    pub hue_tolerance: f32,
    pub saturation_range: [f32; 2],
    pub value_range: [f32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_outfits: usize,
    pub items_per_outfit: [usize; 2],
    pub categories: Vec<String>,
    pub n_themes: usize,
    pub image_size: usize,
    pub texture_kinds: Vec<Texture>,
    pub noise_std: f32,
    /// Hue band half-width; `None` picks 15° or less so bands never overlap.
    pub hue_tolerance: Option<f32>,
    /// Item saturation and value are drawn uniformly from these ranges.
    pub saturation_range: [f32; 2],
    pub value_range: [f32; 2],
    /// Largest item offset from the centre, as a fraction of the side.
    pub max_offset: f32,
    /// Item size multiplier range.
    pub scale_range: [f32; 2],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_outfits: 2000,
            items_per_outfit: [2, 4],
            categories: ["top", "bottom", "shoe", "bag"].map(String::from).to_vec(),
            n_themes: 4,
            image_size: 64,
            texture_kinds: vec![Texture::Solid, Texture::Stripes, Texture::Dots],
            noise_std: 0.02,
            hue_tolerance: None,
            saturation_range: [0.7, 0.8],
            value_range: [0.7, 0.8],
            max_offset: 0.04,
            scale_range: [0.9, 1.05],
            seed: 0,
        }
    }
}

/// Share of the tolerance band item hues are drawn from; the rest absorbs
/// noise and 8-bit quantization.
const HUE_DRAW_SHARE: f32 = 0.85;

impl SynthSpec {
    /// Broad hue bands (40° half-width at 4 themes), wide saturation and
    /// value ranges and heavier noise. Themes stay separable, but neighbouring
    /// bands come within 10° of each other and brightness varies freely, so a
    /// few dozen labeled outfits no longer pin the rule down.
    pub fn hard() -> Self {
        Self {
            hue_tolerance: Some(40.0),
            saturation_range: [0.3, 1.0],
            value_range: [0.4, 1.0],
            noise_std: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.items_per_outfit;
        if lo < 2 || hi < lo {
            return Err(Error::Parameter(format!(
                "items_per_outfit must satisfy 2 <= min <= max, got [{lo}, {hi}]"
            )));
        }
        if self.categories.len() < hi {
            return Err(Error::Parameter(format!(
                "{} categories cannot fill outfits of up to {hi} distinct-category items",
                self.categories.len()
            )));
        }
        let unique: BTreeSet<_> = self.categories.iter().collect();
        if unique.len() != self.categories.len() {
            return Err(Error::Parameter("categories must be distinct".into()));
        }
        if self.n_themes < 2 {
            return Err(Error::Parameter(format!("n_themes must be >= 2, got {}", self.n_themes)));
        }
        if self.image_size < 16 {
            return Err(Error::Parameter(format!(
                "image_size must be >= 16, got {}",
                self.image_size
            )));
        }
        for (name, [lo, hi]) in [("saturation_range", self.saturation_range), ("value_range", self.value_range)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Parameter(format!("{name} must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]")));
            }
        }
        let [s_lo, s_hi] = self.scale_range;
        if !(0.0..=0.25).contains(&self.max_offset) || !(s_lo > 0.0 && s_lo <= s_hi && s_hi <= 1.5) {
            return Err(Error::Parameter(format!(
                "placement out of range: max_offset {} (0..=0.25), scale_range [{s_lo}, {s_hi}] (0 < lo <= hi <= 1.5)",
                self.max_offset
            )));
        }
        if self.texture_kinds.is_empty() {
            return Err(Error::Parameter("at least one texture kind is required".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Parameter(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if self.n_outfits == 0 {
            return Err(Error::Parameter("n_outfits must be positive".into()));
        }
        let separation = 360.0 / self.n_themes as f32;
        if let Some(tol) = self.hue_tolerance {
            if !(tol > 0.0 && 2.0 * tol < separation) {
                return Err(Error::Parameter(format!(
                    "hue_tolerance {tol} must be positive and below half the theme separation ({separation})"
                )));
            }
        }
        Ok(())
    }

    /// Evenly spaced hue bands starting at 30°, so with 2, 3 or 6 themes and
    /// the default tolerance each band sits inside one 60° hue bin of the
    /// default colour histogram.
    pub fn themes(&self) -> Vec<ColorTheme> {
        let separation = 360.0 / self.n_themes as f32;
        let tolerance = self
            .hue_tolerance
            .unwrap_or_else(|| 15.0f32.min(0.4 * separation));
        let offset = 30.0;
        (0..self.n_themes)
            .map(|k| ColorTheme {
                hue_center: (offset + k as f32 * separation).rem_euclid(360.0),
                hue_tolerance: tolerance,
                saturation_range: self.saturation_range,
                value_range: self.value_range,
            })
            .collect()
    }
}

/// Builds the catalog and its ground truth. Deterministic in `spec.seed`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<(Catalog, GroundTruth)> {
    spec.validate()?;
    let themes = spec.themes();
    let mut layout_rng = rng_from_seed(derive_seed(spec.seed, 1));
    let mut items = Vec::new();
    let mut outfits = Vec::with_capacity(spec.n_outfits);
    let mut truth = GroundTruth::new();

    for o in 0..spec.n_outfits {
        let theme_idx = layout_rng.random_range(0..themes.len());
        let k = layout_rng.random_range(spec.items_per_outfit[0]..=spec.items_per_outfit[1]);
        let mut cats: Vec<usize> = (0..spec.categories.len()).collect();
        cats.shuffle(&mut layout_rng);
        cats.truncate(k);
        cats.sort_unstable();

        let mut ids = Vec::with_capacity(k);
        for c in cats {
            let n = items.len();
            let id = format!("i{n:06}");
            let mut rng = rng_from_seed(derive_seed(spec.seed, 1_000_000 + n as u64));
            let look = sample_look(spec, &themes[theme_idx], c, &mut rng);
            let image = render_item(&look, spec.image_size, spec.noise_std, &mut rng);
            truth.insert(id.clone(), theme_idx);
            items.push(Item {
                id: id.clone(),
                category: spec.categories[c].clone(),
                image,
            });
            ids.push(id);
        }
        outfits.push(Outfit {
            id: format!("o{o:05}"),
            item_ids: ids,
        });
    }
    Ok((Catalog::new(items, outfits)?, truth))
}

fn sample_look(spec: &SynthSpec, theme: &ColorTheme, category: usize, rng: &mut Rng) -> ItemLook {
    let reach = theme.hue_tolerance * HUE_DRAW_SHARE;
    let hue = (theme.hue_center + rng.random_range(-reach..=reach)).rem_euclid(360.0);
    let s = rng.random_range(theme.saturation_range[0]..=theme.saturation_range[1]);
    let v = rng.random_range(theme.value_range[0]..=theme.value_range[1]);
    let texture = spec.texture_kinds[rng.random_range(0..spec.texture_kinds.len())];
    let (dx, dy, scale) = render::sample_placement(spec.max_offset, spec.scale_range, rng);
    ItemLook {
        silhouette: Silhouette::for_category(&spec.categories[category], category),
        hsv: [hue, s, v],
        texture,
        dx,
        dy,
        scale,
        period: rng.random_range(0.12..=0.2),
    }
}

/// Category-preserving, theme-mixing negatives built from `templates`
/// (outfit indices) with replacement items drawn from `pool` (item indices).
/// Returns fewer than `count` with a warning when the attempt budget runs
/// out; never returns an item set twice.
pub fn negative_outfits_from(
    catalog: &Catalog,
    truth: &GroundTruth,
    templates: &[usize],
    pool: &[usize],
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Outfit>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let theme_of = |i: usize| -> Result<usize> {
        truth.get(&catalog.item(i).id).copied().ok_or_else(|| {
            Error::Data(format!("item {:?} has no ground-truth theme", catalog.item(i).id))
        })
    };
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut themes_seen = BTreeSet::new();
    for &i in pool {
        by_category.entry(catalog.item(i).category.as_str()).or_default().push(i);
        themes_seen.insert(theme_of(i)?);
    }
    if themes_seen.len() < 2 {
        return Err(Error::Data(
            "negative outfits need items from at least two themes".into(),
        ));
    }
    let usable: Vec<usize> = templates
        .iter()
        .copied()
        .filter(|&o| {
            catalog
                .outfit_items(o)
                .iter()
                .all(|&i| by_category.contains_key(catalog.item(i).category.as_str()))
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Data("no template outfit can be refilled from the pool".into()));
    }

    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(50).max(1000);
    let mut attempts = 0;
    while out.len() < count && attempts < budget {
        attempts += 1;
        let template = usable[rng.random_range(0..usable.len())];
        let mut members: Vec<usize> = catalog
            .outfit_items(template)
            .iter()
            .map(|&i| {
                let cands = &by_category[catalog.item(i).category.as_str()];
                cands[rng.random_range(0..cands.len())]
            })
            .collect();
        let first_theme = theme_of(members[0])?;
        if members.iter().all(|&m| theme_of(m).ok() == Some(first_theme)) {
            // force a second theme into a random slot
            let slot = rng.random_range(0..members.len());
            let cands: Vec<usize> = by_category[catalog.item(members[slot]).category.as_str()]
                .iter()
                .copied()
                .filter(|&c| theme_of(c).ok() != Some(first_theme))
                .collect();
            if cands.is_empty() {
                continue;
            }
            members[slot] = cands[rng.random_range(0..cands.len())];
        }
        let mut key = members.clone();
        key.sort_unstable();
        if key.windows(2).any(|w| w[0] == w[1]) || !seen.insert(key) {
            continue;
        }
        out.push(Outfit {
            id: format!("neg{:05}", out.len()),
            item_ids: members.iter().map(|&i| catalog.item(i).id.clone()).collect(),
        });
    }
    if out.len() < count {
        log::warn!(
            "generated {} of {count} requested negative outfits before exhausting attempts",
            out.len()
        );
    }
    Ok(out)
}

/// Negative (label 0) outfits over the whole catalog: each keeps a real
/// outfit's category layout but mixes at least two themes.
pub fn make_negative_outfits(
    catalog: &Catalog,
    truth: &GroundTruth,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Outfit>> {
    let templates: Vec<usize> = (0..catalog.outfits().len()).collect();
    let pool: Vec<usize> = (0..catalog.items().len()).collect();
    negative_outfits_from(catalog, truth, &templates, &pool, count, rng)
}

pub fn write_ground_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    crate::dataset::write_json_file(path, truth)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes the dataset layout plus `ground_truth.json`.
pub fn write_corpus(
    root: &Path,
    catalog: &Catalog,
    truth: &GroundTruth,
    split: Option<&SplitSpec>,
) -> Result<()> {
    write_catalog(catalog, root, split)?;
    write_ground_truth(&root.join(GROUND_TRUTH_FILE), truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{is_background, rgb_to_hsv};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_outfits: 40,
            image_size: 32,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn outfits_share_a_theme_and_have_distinct_categories() {
        let (cat, gt) = generate_corpus(&small(1)).unwrap();
        for (o, _) in cat.outfits().iter().enumerate() {
            let members = cat.outfit_items(o);
            let theme = gt[&cat.item(members[0]).id];
            let mut cats = BTreeSet::new();
            for &i in members {
                assert_eq!(gt[&cat.item(i).id], theme);
                assert!(cats.insert(cat.item(i).category.clone()));
            }
            assert!((2..=4).contains(&members.len()));
        }
    }

    #[test]
    fn deterministic() {
        let (a, ga) = generate_corpus(&small(7)).unwrap();
        let (b, gb) = generate_corpus(&small(7)).unwrap();
        assert_eq!(ga, gb);
        for (x, y) in a.items().iter().zip(b.items()) {
            assert_eq!(x.image.to_rgb8(), y.image.to_rgb8());
        }
        let (c, _) = generate_corpus(&small(8)).unwrap();
        assert_ne!(a.item(0).image, c.item(0).image);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let mut s = small(0);
        s.n_themes = 1;
        assert!(s.validate().is_err());
        let mut s = small(0);
        s.items_per_outfit = [2, 5];
        assert!(matches!(generate_corpus(&s), Err(Error::Parameter(_))));
        let mut s = small(0);
        s.image_size = 12;
        assert!(s.validate().is_err());
        let mut s = small(0);
        s.hue_tolerance = Some(50.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn theme_bands_do_not_overlap() {
        for n in 2..9 {
            let spec = SynthSpec { n_themes: n, ..small(n as u64) };
            let themes = spec.themes();
            let max_tol = themes.iter().map(|t| t.hue_tolerance).fold(0.0, f32::max);
            for (i, a) in themes.iter().enumerate() {
                for b in &themes[i + 1..] {
                    let d = (a.hue_center - b.hue_center).abs();
                    let d = d.min(360.0 - d);
                    assert!(d > 2.0 * max_tol);
                }
            }
        }
    }

    /// Saturation-weighted circular mean hue (degrees) of foreground pixels.
    fn mean_hue(image: &crate::dataset::Image) -> f32 {
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for rgb in image.iter_rgb() {
            if is_background(rgb, 0.1) {
                continue;
            }
            let [h, s, _] = rgb_to_hsv(rgb);
            let a = f64::from(h) * std::f64::consts::TAU;
            sx += f64::from(s) * a.cos();
            sy += f64::from(s) * a.sin();
        }
        (sy.atan2(sx).to_degrees() as f32).rem_euclid(360.0)
    }

    #[test]
    fn item_hue_stays_in_theme_band() {
        let spec = SynthSpec {
            n_outfits: 300,
            image_size: 32,
            noise_std: 0.02,
            seed: 5,
            ..Default::default()
        };
        let themes = spec.themes();
        let (cat, gt) = generate_corpus(&spec).unwrap();
        let inside = cat
            .items()
            .iter()
            .filter(|it| {
                let t = themes[gt[&it.id]];
                let d = (mean_hue(&it.image) - t.hue_center).abs();
                d.min(360.0 - d) <= t.hue_tolerance
            })
            .count();
        let share = inside as f64 / cat.items().len() as f64;
        assert!(share >= 0.99, "{share}");
    }

    #[test]
    fn negatives_mix_themes_and_keep_layout() {
        let (cat, gt) = generate_corpus(&small(3)).unwrap();
        let negs = make_negative_outfits(&cat, &gt, 30, &mut rng_from_seed(1)).unwrap();
        assert_eq!(negs.len(), 30);
        for n in &negs {
            let themes: BTreeSet<usize> = n.item_ids.iter().map(|id| gt[id]).collect();
            assert!(themes.len() >= 2);
        }
        assert!(make_negative_outfits(&cat, &gt, 0, &mut rng_from_seed(1)).unwrap().is_empty());
    }

    #[test]
    fn single_theme_pool_cannot_make_negatives() {
        let (cat, mut gt) = generate_corpus(&small(3)).unwrap();
        for v in gt.values_mut() {
            *v = 0;
        }
        assert!(make_negative_outfits(&cat, &gt, 5, &mut rng_from_seed(1)).is_err());
    }
}
