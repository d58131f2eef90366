//! Pseudo-triplet mining: each labeled triplet is mirrored into the current
//! unlabeled batch by nearest-neighbour search in embedding space.
//!
//! Selection is a pure function of the two embedding sets. The chosen
//! indices are treated as constants when differentiating the pseudo loss.

use crate::encoder::EmbeddingMatrix;
use crate::{Error, Result};

/// Row indices into the unlabeled batch, pairwise distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoTriplet {
    pub idx_a: usize,
    pub idx_p: usize,
    pub idx_n: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For each query row, the index of the nearest key row (Euclidean). Exact
/// ties go to the lowest index.
pub fn nearest_indices(queries: &EmbeddingMatrix, keys: &EmbeddingMatrix) -> Result<Vec<usize>> {
    if keys.rows() == 0 {
        return Err(Error::Parameter("nearest-neighbour search over an empty key set".into()));
    }
    if queries.cols() != keys.cols() {
        return Err(Error::Shape(format!(
            "query dimension {} differs from key dimension {}",
            queries.cols(),
            keys.cols()
        )));
    }
    Ok(queries
        .iter_rows()
        .map(|q| {
            let mut best = (0, f64::INFINITY);
            for (j, k) in keys.iter_rows().enumerate() {
                let d = squared_distance(q, k);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect())
}

/// Maps every labeled triplet to its nearest unlabeled rows. Candidates in
/// which two roles share a row are dropped; returns the kept triplets and
/// the number dropped.
pub fn assemble_pseudo_triplets(
    anchors: &EmbeddingMatrix,
    positives: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    unlabeled: &EmbeddingMatrix,
) -> Result<(Vec<PseudoTriplet>, usize)> {
    if unlabeled.rows() < 3 {
        return Err(Error::Parameter(format!(
            "pseudo-triplet mining needs at least 3 unlabeled rows, got {}",
            unlabeled.rows()
        )));
    }
    if anchors.rows() != positives.rows() || anchors.rows() != negatives.rows() {
        return Err(Error::Shape(format!(
            "labeled triplet row counts differ: {}, {}, {}",
            anchors.rows(),
            positives.rows(),
            negatives.rows()
        )));
    }
    let a = nearest_indices(anchors, unlabeled)?;
    let p = nearest_indices(positives, unlabeled)?;
    let n = nearest_indices(negatives, unlabeled)?;
    let mut kept = Vec::with_capacity(a.len());
    let mut dropped = 0;
    for ((&idx_a, &idx_p), &idx_n) in a.iter().zip(&p).zip(&n) {
        if idx_a == idx_p || idx_a == idx_n || idx_p == idx_n {
            dropped += 1;
        } else {
            kept.push(PseudoTriplet { idx_a, idx_p, idx_n });
        }
    }
    Ok((kept, dropped))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng as _;

    use super::*;
    use crate::rng_from_seed;

    fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = rng_from_seed(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingMatrix::new(rows, cols, data).unwrap()
    }

    // exhaustive scan using true Euclidean distance and an explicit tie rule
    fn oracle_nearest(q: &[f64], keys: &EmbeddingMatrix) -> usize {
        let dist: Vec<f64> = keys.iter_rows().map(|k| crate::encoder::euclidean(q, k)).collect();
        let min = dist.iter().cloned().fold(f64::INFINITY, f64::min);
        dist.iter().position(|&d| d == min).unwrap()
    }

    #[test]
    fn worked_example() {
        let keys = m(&[&[1.0, 1.0], &[5.0, 5.0], &[0.5, 0.0]]);
        assert_eq!(nearest_indices(&m(&[&[0.0, 0.0]]), &keys).unwrap(), vec![2]);
        assert_eq!(nearest_indices(&m(&[&[5.0, 5.0]]), &keys).unwrap(), vec![1]);
    }

    #[test]
    fn ties_take_lowest_index() {
        let keys = m(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(nearest_indices(&m(&[&[0.0, 0.0]]), &keys).unwrap(), vec![0]);
        let dup = m(&[&[3.0, 3.0], &[2.0, 2.0], &[2.0, 2.0]]);
        assert_eq!(nearest_indices(&m(&[&[2.0, 2.0]]), &dup).unwrap(), vec![1]);
    }

    #[test]
    fn empty_keys_and_shape_errors() {
        let q = m(&[&[0.0, 0.0]]);
        assert!(matches!(nearest_indices(&q, &EmbeddingMatrix::zeros(0, 2)), Err(Error::Parameter(_))));
        assert!(matches!(nearest_indices(&q, &EmbeddingMatrix::zeros(3, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_exhaustive_oracle() {
        for seed in 0..100 {
            let q = random(7, 5, seed);
            let k = random(40, 5, 1000 + seed);
            let got = nearest_indices(&q, &k).unwrap();
            let want: Vec<usize> = q.iter_rows().map(|r| oracle_nearest(r, &k)).collect();
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn exact_copies_are_selected() {
        let u = m(&[&[9.0, 9.0], &[1.0, 0.0], &[7.0, 7.0], &[0.0, 1.0], &[-4.0, 2.0], &[0.0, -1.0]]);
        let (t, dropped) = assemble_pseudo_triplets(
            &m(&[&[1.0, 0.0]]),
            &m(&[&[0.0, 1.0]]),
            &m(&[&[0.0, -1.0]]),
            &u,
        )
        .unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(t, vec![PseudoTriplet { idx_a: 1, idx_p: 3, idx_n: 5 }]);
    }

    #[test]
    fn collisions_are_dropped() {
        let u = m(&[&[0.0, 0.0], &[10.0, 0.0], &[0.0, 10.0]]);
        let (t, dropped) = assemble_pseudo_triplets(
            &m(&[&[0.1, 0.0], &[0.0, 0.0]]),
            &m(&[&[0.0, 0.1], &[9.0, 0.0]]),
            &m(&[&[0.0, 9.0], &[0.0, 9.0]]),
            &u,
        )
        .unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(t, vec![PseudoTriplet { idx_a: 0, idx_p: 1, idx_n: 2 }]);
    }

    #[test]
    fn too_few_unlabeled_rows() {
        let x = m(&[&[0.0]]);
        let u = m(&[&[0.0], &[1.0]]);
        assert!(matches!(assemble_pseudo_triplets(&x, &x, &x, &u), Err(Error::Parameter(_))));
    }

    #[test]
    fn assembly_matches_brute_force() {
        for seed in 0..20 {
            let (a, p, n) = (random(32, 8, seed), random(32, 8, seed + 100), random(32, 8, seed + 200));
            let u = random(256, 8, seed + 300);
            let (kept, dropped) = assemble_pseudo_triplets(&a, &p, &n, &u).unwrap();
            let mut want = Vec::new();
            let mut want_dropped = 0;
            for i in 0..32 {
                let ia = oracle_nearest(a.row(i), &u);
                let ip = oracle_nearest(p.row(i), &u);
                let inn = oracle_nearest(n.row(i), &u);
                if ia != ip && ia != inn && ip != inn {
                    want.push(PseudoTriplet { idx_a: ia, idx_p: ip, idx_n: inn });
                } else {
                    want_dropped += 1;
                }
            }
            assert_eq!((kept, dropped), (want, want_dropped));
        }
    }

    fn shifted(x: &EmbeddingMatrix, t: &[f64]) -> EmbeddingMatrix {
        let data = x.as_slice().iter().enumerate().map(|(i, v)| v + t[i % t.len()]).collect();
        EmbeddingMatrix::new(x.rows(), x.cols(), data).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn counts_add_up_and_translation_invariant(
            seed in 0u64..10_000,
            k in 1usize..20,
            n in 3usize..40,
            t in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let (a, p, q) = (random(k, 4, seed), random(k, 4, seed ^ 1), random(k, 4, seed ^ 2));
            let u = random(n, 4, seed ^ 3);
            let (kept, dropped) = assemble_pseudo_triplets(&a, &p, &q, &u).unwrap();
            prop_assert_eq!(kept.len() + dropped, k);
            for t in &kept {
                prop_assert!(t.idx_a < n && t.idx_p < n && t.idx_n < n);
                prop_assert!(t.idx_a != t.idx_p && t.idx_a != t.idx_n && t.idx_p != t.idx_n);
            }
            // continuous random data: exact distance ties have probability zero
            let (kept2, dropped2) = assemble_pseudo_triplets(
                &shifted(&a, &t), &shifted(&p, &t), &shifted(&q, &t), &shifted(&u, &t)).unwrap();
            prop_assert_eq!(kept2.len() + dropped2, k);
            prop_assert_eq!(kept, kept2);
        }
    }
}
