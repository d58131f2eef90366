use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::{Catalog, SplitsFile};
use crate::{derive_seed, rng_from_seed, Error, Result};

/// Share of outfits held out for validation / test when the catalog does not
/// ship its own held-out lists.
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

const HOLDOUT_STREAM: u64 = 1;
const LABELED_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Labeled,
    Unlabeled,
}

/// Which outfits are labeled, which items form the unlabeled pool, and which
/// outfits are reserved for validation and test.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub alpha: f64,
    pub seed: u64,
    pub labeled_outfit_ids: BTreeSet<String>,
    pub unlabeled_item_ids: BTreeSet<String>,
    pub validation_outfit_ids: BTreeSet<String>,
    pub test_outfit_ids: BTreeSet<String>,
}

/// Round half up, at least one.
fn labeled_count(alpha: f64, train: usize) -> usize {
    ((alpha * train as f64 + 0.5).floor() as usize).clamp(1, train)
}

/// Partitions a catalog into labeled outfits and an unlabeled item pool.
///
/// Validation and test outfits come from the catalog's held-out lists when
/// present; otherwise 10% / 20% of outfits are drawn with `seed`. The labeled
/// outfits are a prefix of a seed-determined permutation of the remaining
/// train outfits, so for a fixed seed a larger `alpha` labels a superset.
/// The unlabeled pool holds every item that belongs to neither a labeled nor
/// a held-out outfit.
pub fn split_catalog(catalog: &Catalog, alpha: f64, seed: u64) -> Result<SplitSpec> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha must be in (0, 1], got {alpha}")));
    }
    let outfits = catalog.outfits();

    let (validation, test): (BTreeSet<String>, BTreeSet<String>) = match catalog.held_out() {
        Some(h) => (h.validation.clone(), h.test.clone()),
        None => {
            let mut order: Vec<usize> = (0..outfits.len()).collect();
            order.shuffle(&mut rng_from_seed(derive_seed(seed, HOLDOUT_STREAM)));
            let n = outfits.len() as f64;
            let n_val = (n * DEFAULT_VALIDATION_FRACTION).round() as usize;
            let n_test = (n * DEFAULT_TEST_FRACTION).round() as usize;
            let pick = |range: std::ops::Range<usize>| {
                order[range].iter().map(|&i| outfits[i].id.clone()).collect()
            };
            (pick(0..n_val), pick(n_val..n_val + n_test))
        }
    };

    let mut train: Vec<usize> = (0..outfits.len())
        .filter(|&i| !validation.contains(&outfits[i].id) && !test.contains(&outfits[i].id))
        .collect();
    if train.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 train outfits to split, found {}",
            train.len()
        )));
    }
    train.shuffle(&mut rng_from_seed(derive_seed(seed, LABELED_STREAM)));
    let k = labeled_count(alpha, train.len());
    let labeled = train[..k].iter().map(|&i| outfits[i].id.clone()).collect();
    Ok(SplitSpec::from_outfit_ids(catalog, alpha, seed, labeled, validation, test))
}

impl SplitSpec {
    /// Builds a split from explicit outfit lists; the unlabeled pool is every
    /// item outside the listed outfits.
    pub fn from_outfit_ids(
        catalog: &Catalog,
        alpha: f64,
        seed: u64,
        labeled_outfit_ids: BTreeSet<String>,
        validation_outfit_ids: BTreeSet<String>,
        test_outfit_ids: BTreeSet<String>,
    ) -> Self {
        let mut excluded = vec![false; catalog.items().len()];
        for (i, o) in catalog.outfits().iter().enumerate() {
            if labeled_outfit_ids.contains(&o.id)
                || validation_outfit_ids.contains(&o.id)
                || test_outfit_ids.contains(&o.id)
            {
                for &item in catalog.outfit_items(i) {
                    excluded[item] = true;
                }
            }
        }
        let unlabeled_item_ids = catalog
            .items()
            .iter()
            .zip(&excluded)
            .filter(|(_, &ex)| !ex)
            .map(|(it, _)| it.id.clone())
            .collect();
        SplitSpec {
            alpha,
            seed,
            labeled_outfit_ids,
            unlabeled_item_ids,
            validation_outfit_ids,
            test_outfit_ids,
        }
    }

    /// Rebuilds a split from a `splits.json` record.
    pub fn from_file(catalog: &Catalog, file: &SplitsFile) -> Result<Self> {
        let spec = Self::from_outfit_ids(
            catalog,
            file.alpha,
            file.seed,
            file.labeled.iter().cloned().collect(),
            file.validation.iter().cloned().collect(),
            file.test.iter().cloned().collect(),
        );
        spec.resolve(catalog)?;
        Ok(spec)
    }
}

/// A split resolved to catalog indices, in catalog order.
#[derive(Debug, Clone)]
pub struct ResolvedSplit {
    pub labeled_outfits: Vec<usize>,
    pub labeled_items: Vec<usize>,
    pub unlabeled_items: Vec<usize>,
    pub validation_outfits: Vec<usize>,
    pub test_outfits: Vec<usize>,
    /// Labeled-pool items grouped by category.
    pub labeled_by_category: BTreeMap<String, Vec<usize>>,
}

impl SplitSpec {
    pub fn pool_of(&self, catalog: &Catalog, item_id: &str) -> Option<Pool> {
        if self.unlabeled_item_ids.contains(item_id) {
            return Some(Pool::Unlabeled);
        }
        let idx = catalog.item_index(item_id)?;
        catalog
            .outfits()
            .iter()
            .enumerate()
            .any(|(o, outfit)| {
                self.labeled_outfit_ids.contains(&outfit.id) && catalog.outfit_items(o).contains(&idx)
            })
            .then_some(Pool::Labeled)
    }

    /// Train outfits that are not labeled (their items feed the unlabeled pool).
    pub fn unlabeled_outfits(&self, catalog: &Catalog) -> Vec<usize> {
        (0..catalog.outfits().len())
            .filter(|&i| {
                let id = &catalog.outfits()[i].id;
                !self.labeled_outfit_ids.contains(id)
                    && !self.validation_outfit_ids.contains(id)
                    && !self.test_outfit_ids.contains(id)
            })
            .collect()
    }

    pub fn resolve(&self, catalog: &Catalog) -> Result<ResolvedSplit> {
        let outfit_set = |ids: &BTreeSet<String>, what: &str| -> Result<Vec<usize>> {
            let found: Vec<usize> = (0..catalog.outfits().len())
                .filter(|&i| ids.contains(&catalog.outfits()[i].id))
                .collect();
            if found.len() != ids.len() {
                return Err(Error::Data(format!(
                    "{} {what} outfit id(s) not present in the catalog",
                    ids.len() - found.len()
                )));
            }
            Ok(found)
        };
        let labeled_outfits = outfit_set(&self.labeled_outfit_ids, "labeled")?;
        let validation_outfits = outfit_set(&self.validation_outfit_ids, "validation")?;
        let test_outfits = outfit_set(&self.test_outfit_ids, "test")?;

        let mut is_labeled = vec![false; catalog.items().len()];
        for &o in &labeled_outfits {
            for &i in catalog.outfit_items(o) {
                is_labeled[i] = true;
            }
        }
        let labeled_items: Vec<usize> = (0..is_labeled.len()).filter(|&i| is_labeled[i]).collect();
        let mut unlabeled_items = Vec::with_capacity(self.unlabeled_item_ids.len());
        for id in &self.unlabeled_item_ids {
            let idx = catalog
                .item_index(id)
                .ok_or_else(|| Error::Data(format!("unlabeled item {id:?} not in catalog")))?;
            if is_labeled[idx] {
                return Err(Error::Data(format!(
                    "item {id:?} is both labeled and unlabeled"
                )));
            }
            unlabeled_items.push(idx);
        }
        unlabeled_items.sort_unstable();

        let mut labeled_by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for &i in &labeled_items {
            labeled_by_category
                .entry(catalog.item(i).category.clone())
                .or_default()
                .push(i);
        }
        Ok(ResolvedSplit {
            labeled_outfits,
            labeled_items,
            unlabeled_items,
            validation_outfits,
            test_outfits,
            labeled_by_category,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::HeldOut;
    use super::*;

    fn with_no_holdout(n: usize) -> Catalog {
        three_category_catalog(n)
            .with_held_out(HeldOut::default())
            .unwrap()
    }

    #[test]
    fn full_supervision_leaves_no_unlabeled_items() {
        let cat = with_no_holdout(20);
        let split = split_catalog(&cat, 1.0, 3).unwrap();
        assert_eq!(split.labeled_outfit_ids.len(), 20);
        assert!(split.unlabeled_item_ids.is_empty());
    }

    #[test]
    fn five_percent_of_a_thousand() {
        let cat = with_no_holdout(1000);
        let split = split_catalog(&cat, 0.05, 11).unwrap();
        assert_eq!(split.labeled_outfit_ids.len(), 50);
        assert_eq!(split.unlabeled_item_ids.len(), 950 * 3);
    }

    #[test]
    fn rounding_is_half_up_with_floor_of_one() {
        assert_eq!(labeled_count(0.25, 10), 3);
        assert_eq!(labeled_count(0.05, 10), 1);
        assert_eq!(labeled_count(0.001, 10), 1);
        assert_eq!(labeled_count(0.15, 10), 2);
    }

    #[test]
    fn deterministic_in_seed() {
        let cat = three_category_catalog(60);
        assert_eq!(
            split_catalog(&cat, 0.3, 5).unwrap(),
            split_catalog(&cat, 0.3, 5).unwrap()
        );
        assert_ne!(
            split_catalog(&cat, 0.3, 5).unwrap().labeled_outfit_ids,
            split_catalog(&cat, 0.3, 6).unwrap().labeled_outfit_ids
        );
    }

    #[test]
    fn parts_are_disjoint() {
        let cat = three_category_catalog(100);
        let s = split_catalog(&cat, 0.2, 9).unwrap();
        assert_eq!(s.validation_outfit_ids.len(), 10);
        assert_eq!(s.test_outfit_ids.len(), 20);
        assert!(s.labeled_outfit_ids.is_disjoint(&s.validation_outfit_ids));
        assert!(s.labeled_outfit_ids.is_disjoint(&s.test_outfit_ids));
        assert!(s.validation_outfit_ids.is_disjoint(&s.test_outfit_ids));
        let r = s.resolve(&cat).unwrap();
        for i in &r.unlabeled_items {
            assert!(!r.labeled_items.contains(i));
        }
        assert_eq!(r.labeled_outfits.len(), 14);
    }

    #[test]
    fn labeled_sets_are_nested_across_alpha() {
        let cat = three_category_catalog(80);
        let small = split_catalog(&cat, 0.1, 2).unwrap();
        let large = split_catalog(&cat, 0.5, 2).unwrap();
        assert!(small.labeled_outfit_ids.is_subset(&large.labeled_outfit_ids));
        assert_eq!(small.validation_outfit_ids, large.validation_outfit_ids);
    }

    #[test]
    fn bad_alpha_is_a_parameter_error() {
        let cat = three_category_catalog(10);
        for a in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(split_catalog(&cat, a, 0), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn too_few_outfits_is_a_data_error() {
        let cat = with_no_holdout(1);
        assert!(matches!(split_catalog(&cat, 0.5, 0), Err(Error::Data(_))));
    }

    #[test]
    fn pool_membership() {
        let cat = with_no_holdout(10);
        let s = split_catalog(&cat, 0.5, 1).unwrap();
        let labeled_outfit = s.labeled_outfit_ids.iter().next().unwrap();
        let o = cat.outfit_index(labeled_outfit).unwrap();
        let item = &cat.item(cat.outfit_items(o)[0]).id;
        assert_eq!(s.pool_of(&cat, item), Some(Pool::Labeled));
        let u = s.unlabeled_item_ids.iter().next().unwrap();
        assert_eq!(s.pool_of(&cat, u), Some(Pool::Unlabeled));
        assert_eq!(s.pool_of(&cat, "nope"), None);
    }
}
