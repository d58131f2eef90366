//! Fill-in-the-blank and outfit-compatibility evaluation.
//!
//! FITB ranks four candidates by cosine similarity to the mean embedding of
//! the incomplete outfit. Compatibility scores an outfit by its negated mean
//! pairwise Euclidean distance and is summarised with ROC AUC against
//! generated negative outfits.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Catalog, Image, Outfit};
use crate::encoder::{color_histogram_embed, embed, EmbeddingMatrix, EncoderState};
use crate::synthcorpus::{negative_outfits_from, GroundTruth};
use crate::{derive_seed, rng_from_seed, Error, Result, Rng};

/// Candidates per FITB question.
pub const FITB_CANDIDATES: usize = 4;
/// Default cap on questions drawn from one outfit.
pub const QUESTIONS_PER_OUTFIT: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitbQuestion {
    pub context_item_ids: Vec<String>,
    pub candidates: Vec<String>,
    pub answer_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatExample {
    pub item_ids: Vec<String>,
    /// 1 for a real outfit, 0 for a generated negative.
    pub label: u8,
}

/// Embeddings keyed by item id.
#[derive(Debug, Clone)]
pub struct ItemEmbeddings {
    index: HashMap<String, usize>,
    matrix: EmbeddingMatrix,
}

impl ItemEmbeddings {
    pub fn new(ids: Vec<String>, matrix: EmbeddingMatrix) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::Shape(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                matrix.rows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.into_iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(Self { index, matrix })
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.index
            .get(id)
            .map(|&i| self.matrix.row(i))
            .ok_or_else(|| Error::Data(format!("no embedding for item {id:?}")))
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }
}

/// What turns item images into vectors at evaluation time.
#[derive(Debug, Clone, Copy)]
pub enum Embedder<'a> {
    Encoder(&'a EncoderState),
    ColorHistogram { bins_per_channel: usize },
}

/// Embeds the given catalog items in chunks to bound memory.
pub fn embed_items(embedder: Embedder<'_>, catalog: &Catalog, items: &[usize]) -> Result<ItemEmbeddings> {
    let ids = items.iter().map(|&i| catalog.item(i).id.clone()).collect();
    let matrix = match embedder {
        Embedder::Encoder(state) => {
            let mut parts = Vec::new();
            for chunk in items.chunks(256) {
                let images: Vec<&Image> = chunk.iter().map(|&i| &catalog.item(i).image).collect();
                parts.push(embed(state, &images)?);
            }
            let refs: Vec<&EmbeddingMatrix> = parts.iter().collect();
            if refs.is_empty() {
                EmbeddingMatrix::zeros(0, state.config().embedding_dim)
            } else {
                EmbeddingMatrix::vstack(&refs)?
            }
        }
        Embedder::ColorHistogram { bins_per_channel } => {
            let rows: Vec<Vec<f64>> = items
                .iter()
                .map(|&i| color_histogram_embed(&catalog.item(i).image, bins_per_channel))
                .collect();
            let b = bins_per_channel.max(1);
            if rows.is_empty() {
                EmbeddingMatrix::zeros(0, b * b * b)
            } else {
                EmbeddingMatrix::from_rows(&rows)?
            }
        }
    };
    ItemEmbeddings::new(ids, matrix)
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Index of the candidate most cosine-similar to the mean context embedding.
/// Ties go to the lowest index; a zero-norm vector scores -1.
pub fn fitb_answer(question: &FitbQuestion, embeddings: &ItemEmbeddings) -> Result<usize> {
    if question.context_item_ids.is_empty() {
        return Err(Error::Parameter("FITB question with empty context".into()));
    }
    if question.candidates.is_empty() {
        return Err(Error::Parameter("FITB question without candidates".into()));
    }
    let first = embeddings.get(&question.context_item_ids[0])?;
    let mut mean = vec![0.0; first.len()];
    for id in &question.context_item_ids {
        for (m, v) in mean.iter_mut().zip(embeddings.get(id)?) {
            *m += v;
        }
    }
    let k = question.context_item_ids.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);

    let mut best = (0, f64::NEG_INFINITY);
    for (c, id) in question.candidates.iter().enumerate() {
        let sim = cosine(embeddings.get(id)?, &mean).unwrap_or_else(|| {
            log::warn!("zero-norm embedding in FITB question (candidate {id:?}); similarity -1");
            -1.0
        });
        if sim > best.1 {
            best = (c, sim);
        }
    }
    Ok(best.0)
}

pub fn fitb_accuracy(questions: &[FitbQuestion], embeddings: &ItemEmbeddings) -> Result<f64> {
    if questions.is_empty() {
        return Err(Error::Metric("FITB accuracy over zero questions".into()));
    }
    let mut correct = 0usize;
    for q in questions {
        if fitb_answer(q, embeddings)? == q.answer_index {
            correct += 1;
        }
    }
    Ok(correct as f64 / questions.len() as f64)
}

/// Negated mean pairwise Euclidean distance; higher is more compatible.
pub fn compat_score(item_ids: &[String], embeddings: &ItemEmbeddings) -> Result<f64> {
    if item_ids.len() < 2 {
        return Err(Error::Parameter(format!(
            "compatibility needs at least 2 items, got {}",
            item_ids.len()
        )));
    }
    let rows = item_ids.iter().map(|id| embeddings.get(id)).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            total += crate::encoder::euclidean(rows[i], rows[j]);
            pairs += 1;
        }
    }
    Ok(-total / pairs as f64)
}

/// ROC AUC as the Mann-Whitney statistic: the probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Metric(format!("label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of midranks of positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        rank_sum += mid * order[start..end].iter().filter(|&&i| labels[i] == 1).count() as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn theme_of(truth: &GroundTruth, catalog: &Catalog, item: usize) -> Result<usize> {
    let id = &catalog.item(item).id;
    truth
        .get(id)
        .copied()
        .ok_or_else(|| Error::Data(format!("item {id:?} has no ground-truth theme")))
}

/// Builds up to `cap` FITB questions per outfit. Distractors come from the
/// items of `outfits`, share the held-out item's category and, with ground
/// truth, belong to a different theme than the outfit.
pub fn generate_fitb_questions(
    catalog: &Catalog,
    outfits: &[usize],
    truth: Option<&GroundTruth>,
    cap: usize,
    rng: &mut Rng,
) -> Result<Vec<FitbQuestion>> {
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let pool: BTreeSet<usize> = outfits.iter().flat_map(|&o| catalog.outfit_items(o).iter().copied()).collect();
    for &i in &pool {
        by_category.entry(catalog.item(i).category.as_str()).or_default().push(i);
    }
    let mut questions = Vec::new();
    let mut skipped = 0usize;
    for &o in outfits {
        let members = catalog.outfit_items(o);
        if members.len() < 2 {
            continue;
        }
        let outfit_theme = match truth {
            Some(t) => Some(theme_of(t, catalog, members[0])?),
            None => None,
        };
        let mut slots: Vec<usize> = (0..members.len()).collect();
        slots.shuffle(rng);
        let mut made = 0;
        for slot in slots {
            if made == cap {
                break;
            }
            let answer = members[slot];
            let mut distractors = Vec::new();
            for &c in &by_category[catalog.item(answer).category.as_str()] {
                if members.contains(&c) {
                    continue;
                }
                if let (Some(t), Some(theme)) = (truth, outfit_theme) {
                    if theme_of(t, catalog, c)? == theme {
                        continue;
                    }
                }
                distractors.push(c);
            }
            if distractors.len() < FITB_CANDIDATES - 1 {
                skipped += 1;
                continue;
            }
            let mut candidates: Vec<usize> = distractors
                .choose_multiple(rng, FITB_CANDIDATES - 1)
                .copied()
                .collect();
            candidates.push(answer);
            candidates.shuffle(rng);
            let answer_index = candidates.iter().position(|&c| c == answer).expect("answer present");
            questions.push(FitbQuestion {
                context_item_ids: members
                    .iter()
                    .filter(|&&m| m != answer)
                    .map(|&m| catalog.item(m).id.clone())
                    .collect(),
                candidates: candidates.iter().map(|&c| catalog.item(c).id.clone()).collect(),
                answer_index,
            });
            made += 1;
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} FITB slots skipped for lack of {} distractors", FITB_CANDIDATES - 1);
    }
    if questions.is_empty() && !outfits.is_empty() {
        log::warn!("no FITB questions could be generated from {} outfits", outfits.len());
    }
    Ok(questions)
}

/// Category-preserving random replacement, used when no ground truth exists.
fn random_negatives(
    catalog: &Catalog,
    outfits: &[usize],
    count: usize,
    forbidden: &BTreeSet<Vec<usize>>,
    rng: &mut Rng,
) -> Vec<Vec<usize>> {
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let pool: BTreeSet<usize> = outfits.iter().flat_map(|&o| catalog.outfit_items(o).iter().copied()).collect();
    for &i in &pool {
        by_category.entry(catalog.item(i).category.as_str()).or_default().push(i);
    }
    let mut seen = forbidden.clone();
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(50).max(1000);
    for _ in 0..budget {
        if out.len() == count || outfits.is_empty() {
            break;
        }
        let template = outfits[rng.random_range(0..outfits.len())];
        let members: Vec<usize> = catalog
            .outfit_items(template)
            .iter()
            .map(|&i| *by_category[catalog.item(i).category.as_str()].choose(rng).expect("non-empty"))
            .collect();
        let mut key = members.clone();
        key.sort_unstable();
        if key.windows(2).any(|w| w[0] == w[1]) || !seen.insert(key) {
            continue;
        }
        out.push(members);
    }
    out
}

/// Real outfits labelled 1 plus up to as many generated negatives labelled 0.
/// Negatives reuse the real outfits' category layouts and items; with ground
/// truth they mix at least two themes.
pub fn generate_compat_examples(
    catalog: &Catalog,
    outfits: &[usize],
    truth: Option<&GroundTruth>,
    rng: &mut Rng,
) -> Result<Vec<CompatExample>> {
    if outfits.len() < 2 {
        return Err(Error::Data(format!(
            "compatibility evaluation needs at least 2 outfits, got {}",
            outfits.len()
        )));
    }
    let positives: BTreeSet<Vec<usize>> = outfits
        .iter()
        .map(|&o| {
            let mut k = catalog.outfit_items(o).to_vec();
            k.sort_unstable();
            k
        })
        .collect();
    let negatives: Vec<Vec<usize>> = match truth {
        Some(t) => {
            let pool: Vec<usize> = outfits
                .iter()
                .flat_map(|&o| catalog.outfit_items(o).iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let generated: Vec<Outfit> = negative_outfits_from(catalog, t, outfits, &pool, outfits.len(), rng)?;
            generated
                .iter()
                .map(|o| {
                    o.item_ids
                        .iter()
                        .map(|id| catalog.item_index(id).expect("generated from catalog"))
                        .collect::<Vec<usize>>()
                })
                .filter(|m| {
                    let mut k = m.clone();
                    k.sort_unstable();
                    !positives.contains(&k)
                })
                .collect()
        }
        None => random_negatives(catalog, outfits, outfits.len(), &positives, rng),
    };
    if negatives.len() < outfits.len() {
        log::warn!("{} negatives for {} positive outfits", negatives.len(), outfits.len());
    }
    let ids = |m: &[usize]| m.iter().map(|&i| catalog.item(i).id.clone()).collect();
    let mut examples: Vec<CompatExample> = outfits
        .iter()
        .map(|&o| CompatExample { item_ids: ids(catalog.outfit_items(o)), label: 1 })
        .collect();
    examples.extend(negatives.iter().map(|m| CompatExample { item_ids: ids(m), label: 0 }));
    Ok(examples)
}

pub fn compat_auc(examples: &[CompatExample], embeddings: &ItemEmbeddings) -> Result<f64> {
    let scores = examples
        .iter()
        .map(|e| compat_score(&e.item_ids, embeddings))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    roc_auc(&scores, &labels)
}

/// Fixed questions and compatibility examples for one set of outfits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub questions: Vec<FitbQuestion>,
    pub examples: Vec<CompatExample>,
}

impl EvalSet {
    /// Generates the set deterministically from `seed`.
    pub fn generate(catalog: &Catalog, outfits: &[usize], truth: Option<&GroundTruth>, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(seed, 0xF17B));
        let questions = generate_fitb_questions(catalog, outfits, truth, QUESTIONS_PER_OUTFIT, &mut rng)?;
        let mut rng = rng_from_seed(derive_seed(seed, 0xC0A7));
        let examples = generate_compat_examples(catalog, outfits, truth, &mut rng)?;
        Ok(Self { questions, examples })
    }

    /// Catalog indices of every item referenced by the set.
    pub fn item_indices(&self, catalog: &Catalog) -> Result<Vec<usize>> {
        let mut ids = BTreeSet::new();
        for q in &self.questions {
            ids.extend(q.context_item_ids.iter().chain(&q.candidates));
        }
        for e in &self.examples {
            ids.extend(&e.item_ids);
        }
        ids.into_iter()
            .map(|id| catalog.item_index(id).ok_or_else(|| Error::Data(format!("unknown item {id:?}"))))
            .collect()
    }

    /// FITB accuracy (None without questions) and compatibility AUC.
    pub fn score(&self, embeddings: &ItemEmbeddings) -> Result<(Option<f64>, f64)> {
        let fitb = if self.questions.is_empty() {
            None
        } else {
            Some(fitb_accuracy(&self.questions, embeddings)?)
        };
        Ok((fitb, compat_auc(&self.examples, embeddings)?))
    }

    pub fn evaluate(&self, embedder: Embedder<'_>, catalog: &Catalog) -> Result<(Option<f64>, f64)> {
        let items = self.item_indices(catalog)?;
        self.score(&embed_items(embedder, catalog, &items)?)
    }
}

/// Contents of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fitb_accuracy: Option<f64>,
    pub compat_auc: f64,
    pub n_questions: usize,
    pub n_compat: usize,
    pub seed: u64,
    pub checkpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::synthcorpus::{generate_corpus, SynthSpec};

    fn emb(rows: &[(&str, &[f64])]) -> ItemEmbeddings {
        let ids = rows.iter().map(|(id, _)| id.to_string()).collect();
        let m = EmbeddingMatrix::from_rows(&rows.iter().map(|(_, r)| r.to_vec()).collect::<Vec<_>>()).unwrap();
        ItemEmbeddings::new(ids, m).unwrap()
    }

    fn q(ctx: &[&str], cands: &[&str], answer: usize) -> FitbQuestion {
        FitbQuestion {
            context_item_ids: ctx.iter().map(|s| s.to_string()).collect(),
            candidates: cands.iter().map(|s| s.to_string()).collect(),
            answer_index: answer,
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn fitb_picks_aligned_candidate() {
        let e = emb(&[
            ("c1", &[1.0, 0.0, 0.0]),
            ("c2", &[3.0, 0.0, 0.0]),
            ("x", &[0.0, 1.0, 0.0]),
            ("y", &[0.0, 0.0, 1.0]),
            ("z", &[0.0, -1.0, 0.0]),
            ("hit", &[5.0, 0.0, 0.0]),
        ]);
        assert_eq!(fitb_answer(&q(&["c1", "c2"], &["x", "y", "hit", "z"], 2), &e).unwrap(), 2);
    }

    #[test]
    fn fitb_tie_goes_to_first() {
        let e = emb(&[("c", &[1.0, 1.0]), ("a", &[0.0, 1.0]), ("b", &[0.0, 1.0]), ("d", &[0.0, 1.0]), ("f", &[0.0, 1.0])]);
        assert_eq!(fitb_answer(&q(&["c"], &["a", "b", "d", "f"], 3), &e).unwrap(), 0);
    }

    #[test]
    fn fitb_zero_norm_scores_minus_one() {
        let e = emb(&[("c", &[1.0, 0.0]), ("zero", &[0.0, 0.0]), ("anti", &[-1.0, 0.0]), ("o", &[0.0, 1.0])]);
        // zero-norm similarity -1 loses to orthogonal (0) and ties with opposite
        assert_eq!(fitb_answer(&q(&["c"], &["zero", "o"], 1), &e).unwrap(), 1);
        assert_eq!(fitb_answer(&q(&["c"], &["zero", "anti"], 0), &e).unwrap(), 0);
    }

    #[test]
    fn fitb_accuracy_hand_count() {
        let e = emb(&[
            ("ctx", &[1.0, 0.0]),
            ("good", &[2.0, 0.1]),
            ("ok", &[1.0, 1.0]),
            ("side", &[0.0, 1.0]),
            ("back", &[-1.0, 0.0]),
        ]);
        // winners: good, good, ok, side (cos: good .9988, ok .707, side 0, back -1)
        let questions = vec![
            q(&["ctx"], &["good", "ok", "side", "back"], 0),
            q(&["ctx"], &["ok", "good", "side", "back"], 0),
            q(&["ctx"], &["back", "side", "ok", "back"], 2),
            q(&["ctx"], &["back", "side", "back", "back"], 0),
        ];
        assert_eq!(fitb_accuracy(&questions, &e).unwrap(), 0.5);
        assert!(fitb_accuracy(&[], &e).is_err());
        assert!(fitb_answer(&q(&[], &["good"], 0), &e).is_err());
    }

    #[test]
    fn fitb_chance_on_random_embeddings() {
        let mut rng = rng_from_seed(5);
        let n = 400;
        let names: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
        let data: Vec<f64> = (0..n * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e = ItemEmbeddings::new(names.clone(), EmbeddingMatrix::new(n, 16, data).unwrap()).unwrap();
        let questions: Vec<FitbQuestion> = (0..2000)
            .map(|_| {
                let picks: Vec<&String> = names.choose_multiple(&mut rng, 7).collect();
                FitbQuestion {
                    context_item_ids: picks[..3].iter().map(|s| s.to_string()).collect(),
                    candidates: picks[3..].iter().map(|s| s.to_string()).collect(),
                    answer_index: rng.random_range(0..4),
                }
            })
            .collect();
        let acc = fitb_accuracy(&questions, &e).unwrap();
        assert!((acc - 0.25).abs() <= 0.03, "accuracy {acc}");
    }

    #[test]
    fn compat_score_examples() {
        let e = emb(&[
            ("a", &[1.0, 2.0]),
            ("b", &[1.0, 2.0]),
            ("p", &[0.0, 0.0]),
            ("q", &[1.0, 0.0]),
            ("r", &[0.5, 3f64.sqrt() / 2.0]),
        ]);
        assert_eq!(compat_score(&ids(&["a", "b"]), &e).unwrap(), 0.0);
        assert!((compat_score(&ids(&["p", "q", "r"]), &e).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(compat_score(&ids(&["a"]), &e), Err(Error::Parameter(_))));
    }

    #[test]
    fn compat_score_matches_double_loop() {
        let mut rng = rng_from_seed(8);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let names: Vec<String> = (0..5).map(|i| format!("x{i}")).collect();
            let e = ItemEmbeddings::new(names.clone(), EmbeddingMatrix::from_rows(&rows).unwrap()).unwrap();
            let mut sum = 0.0;
            let mut count = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    if i < j {
                        let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                        sum += d;
                        count += 1.0;
                    }
                }
            }
            assert!((compat_score(&names, &e).unwrap() + sum / count).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.4, 0.3], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[1, 0, 1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.2], &[1, 0]).unwrap(), 0.0);
        assert!(matches!(roc_auc(&[1.0, 2.0], &[1, 1]), Err(Error::Metric(_))));
        assert!(matches!(roc_auc(&[1.0], &[1, 0]), Err(Error::Shape(_))));
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = rng_from_seed(13);
        for _ in 0..200 {
            let n = rng.random_range(2..60);
            // coarse scores so ties are common
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 4.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let got = roc_auc(&scores, &labels).unwrap();
            assert!((got - auc_oracle(&scores, &labels)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            scores in proptest::collection::vec(-3.0f64..3.0, 4..40),
            seed in 0u64..1000,
        ) {
            let mut rng = rng_from_seed(seed);
            let mut labels: Vec<u8> = scores.iter().map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let base = roc_auc(&scores, &labels).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 7.0).collect();
            prop_assert!((roc_auc(&mapped, &labels).unwrap() - base).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn fitb_scale_invariant(seed in 0u64..1000, s in 0.01f64..100.0) {
            let mut rng = rng_from_seed(seed);
            let names: Vec<String> = (0..7).map(|i| format!("n{i}")).collect();
            let data: Vec<f64> = (0..7 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = data.iter().map(|v| v * s).collect();
            let a = ItemEmbeddings::new(names.clone(), EmbeddingMatrix::new(7, 5, data).unwrap()).unwrap();
            let b = ItemEmbeddings::new(names.clone(), EmbeddingMatrix::new(7, 5, scaled).unwrap()).unwrap();
            let question = FitbQuestion {
                context_item_ids: names[..3].to_vec(),
                candidates: names[3..].to_vec(),
                answer_index: 0,
            };
            prop_assert_eq!(fitb_answer(&question, &a).unwrap(), fitb_answer(&question, &b).unwrap());
        }
    }

    fn corpus(themes: usize, outfits: usize) -> (Catalog, GroundTruth) {
        generate_corpus(&SynthSpec {
            n_outfits: outfits,
            n_themes: themes,
            image_size: 16,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn two_item_outfit_yields_two_questions() {
        let (catalog, truth) = corpus(2, 60);
        let two = (0..catalog.outfits().len()).find(|&o| catalog.outfit_items(o).len() == 2).unwrap();
        let qs = generate_fitb_questions(&catalog, &(0..60).collect::<Vec<_>>(), Some(&truth), usize::MAX, &mut rng_from_seed(1))
            .unwrap();
        let from_two = qs
            .iter()
            .filter(|q| q.context_item_ids.len() == 1 && catalog.outfits()[two].item_ids.contains(&q.context_item_ids[0]))
            .count();
        assert_eq!(from_two, 2);
    }

    #[test]
    fn distractors_come_from_other_theme() {
        let (catalog, truth) = corpus(2, 80);
        let outfits: Vec<usize> = (0..80).collect();
        let qs = generate_fitb_questions(&catalog, &outfits, Some(&truth), 2, &mut rng_from_seed(2)).unwrap();
        assert!(qs.len() > 100);
        for q in &qs {
            assert_eq!(q.candidates.len(), 4);
            assert_eq!(q.candidates.iter().collect::<BTreeSet<_>>().len(), 4);
            let ctx_theme = truth[&q.context_item_ids[0]];
            let answer = &q.candidates[q.answer_index];
            assert_eq!(truth[answer], ctx_theme);
            let cat = &catalog.item_by_id(answer).unwrap().category;
            for (i, c) in q.candidates.iter().enumerate() {
                assert_eq!(&catalog.item_by_id(c).unwrap().category, cat);
                if i != q.answer_index {
                    assert_ne!(truth[c], ctx_theme);
                }
            }
        }
    }

    #[test]
    fn single_theme_gives_no_questions() {
        let (catalog, truth) = corpus(2, 30);
        let truth: GroundTruth = truth.into_keys().map(|id| (id, 0)).collect();
        let qs = generate_fitb_questions(&catalog, &(0..30).collect::<Vec<_>>(), Some(&truth), 2, &mut rng_from_seed(2)).unwrap();
        assert!(qs.is_empty());
    }

    #[test]
    fn compat_examples_balanced_and_distinct() {
        for truth_given in [true, false] {
            let (catalog, truth) = corpus(3, 120);
            let outfits: Vec<usize> = (0..120).collect();
            let t = truth_given.then_some(&truth);
            let ex = generate_compat_examples(&catalog, &outfits, t, &mut rng_from_seed(4)).unwrap();
            let pos: Vec<_> = ex.iter().filter(|e| e.label == 1).collect();
            let neg: Vec<_> = ex.iter().filter(|e| e.label == 0).collect();
            assert_eq!(pos.len(), 120);
            assert!(neg.len() <= 120 && neg.len() >= 119);
            let key = |v: &[String]| {
                let mut k = v.to_vec();
                k.sort();
                k
            };
            let pos_keys: BTreeSet<_> = pos.iter().map(|e| key(&e.item_ids)).collect();
            for n in &neg {
                assert!(!pos_keys.contains(&key(&n.item_ids)));
            }
        }
        let (catalog, truth) = corpus(2, 10);
        assert!(generate_compat_examples(&catalog, &[0], Some(&truth), &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn color_histogram_baseline_separates_two_themes() {
        let (catalog, truth) = corpus(2, 150);
        let outfits: Vec<usize> = (0..150).collect();
        let set = EvalSet::generate(&catalog, &outfits, Some(&truth), 9).unwrap();
        let (fitb, auc) = set.evaluate(Embedder::ColorHistogram { bins_per_channel: 6 }, &catalog).unwrap();
        assert!(auc > 0.9, "auc {auc}");
        assert!(fitb.unwrap() > 0.5);
    }

    #[test]
    fn metrics_json_shape() {
        let m = Metrics {
            fitb_accuracy: Some(0.5),
            compat_auc: 0.75,
            n_questions: 10,
            n_compat: 20,
            seed: 1,
            checkpoint: "model.ckpt".into(),
            config_hash: None,
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        assert_eq!(keys, BTreeSet::from(["fitb_accuracy", "compat_auc", "n_questions", "n_compat", "seed", "checkpoint"]));
    }
}
