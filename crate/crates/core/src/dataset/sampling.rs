use rand::Rng as _;

use super::{Catalog, SplitSpec};
use crate::{Error, Result, Rng};

/// Catalog indices of an (anchor, positive, negative) triple, plus the
/// labeled outfit the anchor/positive pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub outfit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledBatch {
    pub triplets: Vec<LabeledTriplet>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabeledBatch {
    pub items: Vec<usize>,
}

struct EligibleOutfit {
    outfit: usize,
    /// Ordered (anchor, positive) pairs with distinct categories whose
    /// positive category has at least one negative outside the outfit.
    pairs: Vec<(usize, usize)>,
}

/// Draws labeled triplets: a uniform labeled outfit, a uniform ordered pair of
/// distinct-category items in it, and a uniform negative from the labeled pool
/// of the positive's category that is not in the same outfit.
pub struct TripletSampler<'a> {
    catalog: &'a Catalog,
    eligible: Vec<EligibleOutfit>,
    by_category: std::collections::BTreeMap<String, Vec<usize>>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(catalog: &'a Catalog, split: &SplitSpec) -> Result<Self> {
        let resolved = split.resolve(catalog)?;
        let by_category = resolved.labeled_by_category;
        let mut eligible = Vec::new();
        let mut any_pair = false;
        for &o in &resolved.labeled_outfits {
            let members = catalog.outfit_items(o);
            let mut pairs = Vec::new();
            for &a in members {
                for &p in members {
                    let cat_p = &catalog.item(p).category;
                    if catalog.item(a).category == *cat_p {
                        continue;
                    }
                    any_pair = true;
                    let has_negative = by_category
                        .get(cat_p)
                        .is_some_and(|pool| pool.iter().any(|n| !members.contains(n)));
                    if has_negative {
                        pairs.push((a, p));
                    }
                }
            }
            if !pairs.is_empty() {
                eligible.push(EligibleOutfit { outfit: o, pairs });
            }
        }
        if !any_pair {
            return Err(Error::Data(
                "no labeled outfit contains two items of distinct categories".into(),
            ));
        }
        if eligible.is_empty() {
            return Err(Error::Data(
                "no labeled outfit admits a negative from its positive's category".into(),
            ));
        }
        Ok(Self {
            catalog,
            eligible,
            by_category,
        })
    }

    /// Number of labeled outfits that can produce at least one triplet.
    pub fn eligible_outfits(&self) -> usize {
        self.eligible.len()
    }

    pub fn sample_one(&self, rng: &mut Rng) -> LabeledTriplet {
        let e = &self.eligible[rng.random_range(0..self.eligible.len())];
        let (anchor, positive) = e.pairs[rng.random_range(0..e.pairs.len())];
        let members = self.catalog.outfit_items(e.outfit);
        let pool = &self.by_category[&self.catalog.item(positive).category];
        // rejection sampling terminates: eligibility guarantees a candidate
        let negative = loop {
            let n = pool[rng.random_range(0..pool.len())];
            if !members.contains(&n) {
                break n;
            }
        };
        LabeledTriplet {
            anchor,
            positive,
            negative,
            outfit: e.outfit,
        }
    }

    pub fn sample(&self, size: usize, rng: &mut Rng) -> LabeledBatch {
        LabeledBatch {
            triplets: (0..size).map(|_| self.sample_one(rng)).collect(),
        }
    }
}

/// Draws batches of distinct items from a pool.
pub struct UnlabeledSampler {
    pool: Vec<usize>,
}

impl UnlabeledSampler {
    pub fn new(pool: Vec<usize>) -> Self {
        Self { pool }
    }

    pub fn from_split(catalog: &Catalog, split: &SplitSpec) -> Result<Self> {
        Ok(Self::new(split.resolve(catalog)?.unlabeled_items))
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    /// `size` distinct pool items. A pool smaller than `size` yields the
    /// whole pool in random order and logs a warning.
    pub fn sample(&self, size: usize, rng: &mut Rng) -> Result<UnlabeledBatch> {
        if self.pool.is_empty() && size > 0 {
            return Err(Error::Data("unlabeled pool is empty".into()));
        }
        let amount = if size > self.pool.len() {
            log::warn!(
                "unlabeled batch of {size} requested but the pool holds {}; using the whole pool",
                self.pool.len()
            );
            self.pool.len()
        } else {
            size
        };
        let items = rand::seq::index::sample(rng, self.pool.len(), amount)
            .into_iter()
            .map(|i| self.pool[i])
            .collect();
        Ok(UnlabeledBatch { items })
    }
}

pub fn sample_labeled_batch(
    catalog: &Catalog,
    split: &SplitSpec,
    size: usize,
    rng: &mut Rng,
) -> Result<LabeledBatch> {
    Ok(TripletSampler::new(catalog, split)?.sample(size, rng))
}

pub fn sample_unlabeled_batch(
    catalog: &Catalog,
    split: &SplitSpec,
    size: usize,
    rng: &mut Rng,
) -> Result<UnlabeledBatch> {
    UnlabeledSampler::from_split(catalog, split)?.sample(size, rng)
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use super::super::fixtures::*;
    use super::super::{split_catalog, HeldOut};
    use super::*;
    use crate::rng_from_seed;

    fn all_labeled(cat: Catalog) -> (Catalog, SplitSpec) {
        let cat = cat.with_held_out(HeldOut::default()).unwrap();
        let split = split_catalog(&cat, 1.0, 0).unwrap();
        (cat, split)
    }

    #[test]
    fn only_valid_triplet_is_found() {
        let cat = Catalog::new(
            vec![item("t1", "top"), item("b1", "bottom"), item("b2", "bottom"), item("t2", "top")],
            vec![outfit("o1", &["t1", "b1"]), outfit("o2", &["b2", "t2"])],
        )
        .unwrap();
        let (cat, split) = all_labeled(cat);
        let batch = sample_labeled_batch(&cat, &split, 200, &mut rng_from_seed(1)).unwrap();
        let id = |i: usize| cat.item(i).id.as_str();
        let seen: BTreeSet<(&str, &str, &str)> = batch
            .triplets
            .iter()
            .map(|t| (id(t.anchor), id(t.positive), id(t.negative)))
            .collect();
        assert!(seen.contains(&("t1", "b1", "b2")));
        let expected: BTreeSet<_> = [
            ("t1", "b1", "b2"),
            ("b1", "t1", "t2"),
            ("b2", "t2", "t1"),
            ("t2", "b2", "b1"),
        ]
        .into_iter()
        .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn single_category_outfits_are_a_data_error() {
        let cat = Catalog::new(
            vec![item("a", "top"), item("b", "top"), item("c", "top"), item("d", "top")],
            vec![outfit("o1", &["a", "b"]), outfit("o2", &["c", "d"])],
        )
        .unwrap();
        let (cat, split) = all_labeled(cat);
        assert!(matches!(
            sample_labeled_batch(&cat, &split, 4, &mut rng_from_seed(0)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn triplet_invariants_hold() {
        let (cat, split) = all_labeled(three_category_catalog(30));
        let batch = sample_labeled_batch(&cat, &split, 500, &mut rng_from_seed(4)).unwrap();
        assert_eq!(batch.triplets.len(), 500);
        for t in &batch.triplets {
            let c = |i: usize| &cat.item(i).category;
            assert_ne!(c(t.anchor), c(t.positive));
            assert_eq!(c(t.negative), c(t.positive));
            let members = cat.outfit_items(t.outfit);
            assert!(members.contains(&t.anchor) && members.contains(&t.positive));
            assert!(!members.contains(&t.negative));
        }
    }

    #[test]
    fn category_pairs_are_uniform() {
        // every outfit holds the same three categories, so the six ordered
        // category pairs are equally likely
        let (cat, split) = all_labeled(three_category_catalog(40));
        let sampler = TripletSampler::new(&cat, &split).unwrap();
        let mut rng = rng_from_seed(99);
        let n = 10_000;
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for _ in 0..n {
            let t = sampler.sample_one(&mut rng);
            *counts
                .entry((cat.item(t.anchor).category.clone(), cat.item(t.positive).category.clone()))
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = n as f64 / 6.0;
        let mut chi2 = 0.0;
        for (pair, c) in counts {
            let share = c as f64 / n as f64;
            assert!((share - 1.0 / 6.0).abs() <= 0.05, "{pair:?}: {share}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 5 degrees of freedom, p = 0.001
        assert!(chi2 < 20.52, "chi2 = {chi2}");
    }

    #[test]
    fn unlabeled_batches() {
        let sampler = UnlabeledSampler::new((0..100).collect());
        let a = sampler.sample(4, &mut rng_from_seed(5)).unwrap();
        let b = sampler.sample(4, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
        let uniq: BTreeSet<_> = a.items.iter().collect();
        assert_eq!(uniq.len(), 4);

        let full = sampler.sample(100, &mut rng_from_seed(1)).unwrap();
        let mut sorted = full.items.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_request_degrades_to_whole_pool() {
        let sampler = UnlabeledSampler::new((0..500).collect());
        let batch = sampler.sample(1024, &mut rng_from_seed(2)).unwrap();
        assert_eq!(batch.items.len(), 500);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let sampler = UnlabeledSampler::new(vec![]);
        assert!(sampler.sample(3, &mut rng_from_seed(2)).is_err());
    }
}
