//! Items, outfits, labeled/unlabeled splits and batch sampling.

mod image;
mod layout;
mod sampling;
mod split;

use std::collections::{BTreeSet, HashMap};

pub use image::{hsv_to_rgb, is_background, luma, rgb_to_hsv, Image, LUMA, MIN_SIDE};
pub use layout::{load_polyvore_layout, read_splits_file, write_catalog, SplitsFile, IMAGE_DIR, OUTFITS_FILE, SPLITS_FILE};
pub(crate) use layout::write_json as write_json_file;
pub use sampling::{
    sample_labeled_batch, sample_unlabeled_batch, LabeledBatch, LabeledTriplet, TripletSampler,
    UnlabeledBatch, UnlabeledSampler,
};
pub use split::{split_catalog, Pool, ResolvedSplit, SplitSpec};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub category: String,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outfit {
    pub id: String,
    pub item_ids: Vec<String>,
}

/// Outfits reserved for model selection and final testing, as shipped with a
/// dataset. When absent, [`split_catalog`] carves them out itself.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeldOut {
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Every item and outfit of a dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    items: Vec<Item>,
    index: HashMap<String, usize>,
    outfits: Vec<Outfit>,
    outfit_items: Vec<Vec<usize>>,
    categories: BTreeSet<String>,
    held_out: Option<HeldOut>,
}

impl Catalog {
    /// Validates and indexes a catalog. Fails when an id repeats, an outfit
    /// has fewer than two items, or an outfit references an unknown item.
    pub fn new(items: Vec<Item>, outfits: Vec<Outfit>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate item id {:?}", item.id)));
            }
        }
        let categories = items.iter().map(|it| it.category.clone()).collect();

        let mut seen_outfits = BTreeSet::new();
        let mut outfit_items = Vec::with_capacity(outfits.len());
        for outfit in &outfits {
            if !seen_outfits.insert(outfit.id.as_str()) {
                return Err(Error::Data(format!("duplicate outfit id {:?}", outfit.id)));
            }
            if outfit.item_ids.len() < 2 {
                return Err(Error::Data(format!(
                    "outfit {:?} has {} item(s); at least 2 are required",
                    outfit.id,
                    outfit.item_ids.len()
                )));
            }
            let mut resolved = Vec::with_capacity(outfit.item_ids.len());
            for id in &outfit.item_ids {
                let idx = *index.get(id).ok_or_else(|| {
                    Error::Data(format!("outfit {:?} references unknown item {id:?}", outfit.id))
                })?;
                if resolved.contains(&idx) {
                    return Err(Error::Data(format!(
                        "outfit {:?} lists item {id:?} twice",
                        outfit.id
                    )));
                }
                resolved.push(idx);
            }
            outfit_items.push(resolved);
        }

        Ok(Self {
            items,
            index,
            outfits,
            outfit_items,
            categories,
            held_out: None,
        })
    }

    /// Attaches predefined validation/test outfits.
    pub fn with_held_out(mut self, held_out: HeldOut) -> Result<Self> {
        for id in held_out.validation.iter().chain(&held_out.test) {
            if self.outfit_index(id).is_none() {
                return Err(Error::Data(format!("held-out outfit {id:?} not in catalog")));
            }
        }
        if let Some(id) = held_out.validation.intersection(&held_out.test).next() {
            return Err(Error::Data(format!(
                "outfit {id:?} is in both validation and test"
            )));
        }
        self.held_out = Some(held_out);
        Ok(self)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, idx: usize) -> &Item {
        &self.items[idx]
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn item_by_id(&self, id: &str) -> Option<&Item> {
        self.item_index(id).map(|i| &self.items[i])
    }

    pub fn outfits(&self) -> &[Outfit] {
        &self.outfits
    }

    pub fn outfit_index(&self, id: &str) -> Option<usize> {
        self.outfits.iter().position(|o| o.id == id)
    }

    /// Item indices of outfit `idx`, in outfit order.
    pub fn outfit_items(&self, idx: usize) -> &[usize] {
        &self.outfit_items[idx]
    }

    pub fn categories(&self) -> &BTreeSet<String> {
        &self.categories
    }

    pub fn held_out(&self) -> Option<&HeldOut> {
        self.held_out.as_ref()
    }

    /// Common image size `(height, width)`, or `None` when items differ.
    pub fn image_size(&self) -> Option<(usize, usize)> {
        let first = self.items.first()?;
        let size = (first.image.height(), first.image.width());
        self.items
            .iter()
            .all(|it| (it.image.height(), it.image.width()) == size)
            .then_some(size)
    }

    /// Items that appear in no outfit.
    pub fn orphan_items(&self) -> Vec<usize> {
        let mut used = vec![false; self.items.len()];
        for idx in self.outfit_items.iter().flatten() {
            used[*idx] = true;
        }
        (0..self.items.len()).filter(|&i| !used[i]).collect()
    }
}
