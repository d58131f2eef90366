//! The training loop: labeled triplets, consistency over shape/appearance
//! views of an unlabeled batch, and pseudo-triplets mined from that batch,
//! combined and minimised with Adam. The parameters with the best validation
//! compatibility AUC are kept.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Catalog, Image, SplitSpec, TripletSampler, UnlabeledSampler};
use crate::encoder::{init_encoder, loss_gradient, EmbeddingMatrix, EncoderConfig, EncoderState};
use crate::evaluation::{Embedder, EvalSet};
use crate::losses::{triplet_margin_loss_grad, LossConfig};
use crate::mining::{assemble_pseudo_triplets, PseudoTriplet};
use crate::synthcorpus::GroundTruth;
use crate::transforms::{
    appearance_transform, shape_transform, AppearanceTransformParams, ShapeTransformParams,
};
use crate::{derive_seed, rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}: {}", grad[i])));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Which items feed the consistency and pseudo-triplet terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SslPool {
    /// Only items outside the labeled outfits.
    Unlabeled,
    /// Labeled and unlabeled training items together.
    AllItems,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Overrides `ceil(labeled outfits / labeled_batch)`.
    pub iterations_per_epoch: Option<usize>,
    pub shape: ShapeTransformParams,
    pub appearance: AppearanceTransformParams,
    pub ssl_pool: SslPool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            labeled_batch: 256,
            unlabeled_batch: 1024,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            epochs: 10,
            seed: 0,
            iterations_per_epoch: None,
            shape: ShapeTransformParams::default(),
            appearance: AppearanceTransformParams::default(),
            ssl_pool: SslPool::Unlabeled,
        }
    }
}

impl TrainConfig {
    /// Small batches, a larger step size and a fixed iteration budget, sized
    /// for a single CPU core and 32-pixel images.
    pub fn desk_scale() -> Self {
        Self {
            labeled_batch: 16,
            unlabeled_batch: 64,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            epochs: 60,
            iterations_per_epoch: Some(10),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.shape.validate()?;
        self.appearance.validate()?;
        if self.labeled_batch == 0 || self.epochs == 0 || self.iterations_per_epoch == Some(0) {
            return Err(Error::Config(
                "labeled_batch, epochs and iterations_per_epoch must be positive".into(),
            ));
        }
        if self.uses_unlabeled() && self.unlabeled_batch < 3 {
            return Err(Error::Config(format!(
                "unlabeled_batch must be at least 3, got {}",
                self.unlabeled_batch
            )));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
        }
        Ok(())
    }

    pub fn uses_unlabeled(&self) -> bool {
        self.loss.lambda_ss > 0.0 || self.loss.lambda_pseudo > 0.0
    }

    pub fn iterations_for(&self, labeled_outfits: usize) -> usize {
        self.iterations_per_epoch
            .unwrap_or_else(|| labeled_outfits.div_ceil(self.labeled_batch).max(1))
    }
}

/// SHA-256 over the canonical JSON of everything that determines a run.
pub fn config_hash(encoder: &EncoderConfig, train: &TrainConfig, split: &SplitSpec) -> String {
    let value = serde_json::json!({ "encoder": encoder, "train": train, "split": split });
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

/// Per-term weights for [`objective_gradient`]; the labeled term carries
/// weight 1 in the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub labeled: f64,
    pub consistency: f64,
    pub pseudo: f64,
}

impl From<&LossConfig> for TermWeights {
    fn from(cfg: &LossConfig) -> Self {
        Self {
            labeled: 1.0,
            consistency: cfg.lambda_ss,
            pseudo: cfg.lambda_pseudo,
        }
    }
}

/// Images of one iteration. The three unlabeled views are row-aligned;
/// the view vectors may be empty when the consistency term is off.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub anchors: Vec<&'a Image>,
    pub positives: Vec<&'a Image>,
    pub negatives: Vec<&'a Image>,
    pub unlabeled: Vec<&'a Image>,
    pub shape_views: Vec<Image>,
    pub appearance_views: Vec<Image>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParts {
    pub labeled: f64,
    pub consistency: f64,
    pub pseudo: f64,
    pub total: f64,
    pub triplets: Vec<PseudoTriplet>,
    pub dropped: usize,
}

/// Value and parameter gradient of the weighted objective on one batch.
///
/// Pseudo-triplets are mined from the unlabeled embeddings unless `mined`
/// supplies them; either way the selected indices are constants of the
/// gradient.
pub fn objective_gradient(
    state: &EncoderState,
    batch: &Batch<'_>,
    margin: f64,
    weights: TermWeights,
    mined: Option<&[PseudoTriplet]>,
) -> Result<(ObjectiveParts, Vec<f64>)> {
    let b = batch.anchors.len();
    let u = batch.unlabeled.len();
    if batch.positives.len() != b || batch.negatives.len() != b {
        return Err(Error::Shape("labeled triplet views differ in length".into()));
    }
    let with_views = weights.consistency != 0.0;
    if with_views && (batch.shape_views.len() != u || batch.appearance_views.len() != u) {
        return Err(Error::Shape("unlabeled views are not row-aligned".into()));
    }
    let with_pseudo = weights.pseudo != 0.0;

    let mut images: Vec<&Image> = Vec::with_capacity(3 * b + 3 * u);
    images.extend(&batch.anchors);
    images.extend(&batch.positives);
    images.extend(&batch.negatives);
    if with_views || with_pseudo {
        images.extend(&batch.unlabeled);
    }
    if with_views {
        images.extend(batch.shape_views.iter());
        images.extend(batch.appearance_views.iter());
    }

    let mut parts = ObjectiveParts {
        labeled: 0.0,
        consistency: 0.0,
        pseudo: 0.0,
        total: 0.0,
        triplets: Vec::new(),
        dropped: 0,
    };
    let (total, grad) = loss_gradient(state, &images, |emb| {
        let mut d = EmbeddingMatrix::zeros(emb.rows(), emb.cols());
        let (l, g) = triplet_margin_loss_grad(
            &emb.slice_rows(0, b),
            &emb.slice_rows(b, b),
            &emb.slice_rows(2 * b, b),
            margin,
        )?;
        parts.labeled = l;
        scatter(&mut d, 0, &g.anchor, weights.labeled);
        scatter(&mut d, b, &g.positive, weights.labeled);
        scatter(&mut d, 2 * b, &g.negative, weights.labeled);

        let base = 3 * b;
        if with_views {
            let (l, g) = triplet_margin_loss_grad(
                &emb.slice_rows(base, u),
                &emb.slice_rows(base + u, u),
                &emb.slice_rows(base + 2 * u, u),
                margin,
            )?;
            parts.consistency = l;
            scatter(&mut d, base, &g.anchor, weights.consistency);
            scatter(&mut d, base + u, &g.positive, weights.consistency);
            scatter(&mut d, base + 2 * u, &g.negative, weights.consistency);
        }
        if with_pseudo {
            let unl = emb.slice_rows(base, u);
            let triplets = match mined {
                Some(t) => t.to_vec(),
                None => {
                    let (t, dropped) = assemble_pseudo_triplets(
                        &emb.slice_rows(0, b),
                        &emb.slice_rows(b, b),
                        &emb.slice_rows(2 * b, b),
                        &unl,
                    )?;
                    parts.dropped = dropped;
                    t
                }
            };
            if let Some(t) = triplets.iter().find(|t| t.idx_a.max(t.idx_p).max(t.idx_n) >= u) {
                return Err(Error::Shape(format!("pseudo-triplet {t:?} outside a batch of {u}")));
            }
            let ia: Vec<usize> = triplets.iter().map(|t| t.idx_a).collect();
            let ip: Vec<usize> = triplets.iter().map(|t| t.idx_p).collect();
            let inn: Vec<usize> = triplets.iter().map(|t| t.idx_n).collect();
            let (l, g) = triplet_margin_loss_grad(
                &unl.select_rows(&ia),
                &unl.select_rows(&ip),
                &unl.select_rows(&inn),
                margin,
            )?;
            parts.pseudo = l;
            for (k, t) in triplets.iter().enumerate() {
                d.add_to_row(base + t.idx_a, g.anchor.row(k), weights.pseudo);
                d.add_to_row(base + t.idx_p, g.positive.row(k), weights.pseudo);
                d.add_to_row(base + t.idx_n, g.negative.row(k), weights.pseudo);
            }
            parts.triplets = triplets;
        }
        let total = weights.labeled * parts.labeled
            + weights.consistency * parts.consistency
            + weights.pseudo * parts.pseudo;
        Ok((total, d))
    })?;
    parts.total = total;
    Ok((parts, grad))
}

fn scatter(d: &mut EmbeddingMatrix, start: usize, block: &EmbeddingMatrix, weight: f64) {
    if weight == 0.0 {
        return;
    }
    for i in 0..block.rows() {
        d.add_to_row(start + i, block.row(i), weight);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub labeled: f64,
    pub consistency: f64,
    pub pseudo: f64,
    pub total: f64,
    pub pseudo_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_compat_auc: f64,
    pub val_fitb_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub config_hash: String,
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Zero-based epoch with the highest validation AUC (first on ties).
    pub best_epoch: Option<usize>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Header { config_hash: &'a str },
    Iteration(&'a IterationRecord),
    Epoch(&'a EpochRecord),
    Summary { best_epoch: Option<usize> },
}

impl TrainLog {
    pub fn to_ndjson(&self) -> String {
        let mut lines = vec![LogLine::Header {
            config_hash: &self.config_hash,
        }];
        let per_epoch = |e: usize| self.iterations.iter().filter(move |r| r.epoch == e);
        for e in 0..self.epochs.len().max(self.iterations.last().map_or(0, |r| r.epoch + 1)) {
            lines.extend(per_epoch(e).map(LogLine::Iteration));
            if let Some(rec) = self.epochs.get(e) {
                lines.push(LogLine::Epoch(rec));
            }
        }
        lines.push(LogLine::Summary {
            best_epoch: self.best_epoch,
        });
        let mut out = String::new();
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_ndjson(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_ndjson().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation AUC, or the last good ones when
    /// no epoch finished.
    pub best: EncoderState,
    /// Parameters after the last successful update.
    pub last: EncoderState,
    pub log: TrainLog,
    /// Diagnostic when training stopped on a non-finite value.
    pub aborted: Option<String>,
}

/// Builds a validation set without ground truth and trains.
pub fn train(catalog: &Catalog, split: &SplitSpec, encoder: &EncoderConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_truth(catalog, split, encoder, cfg, None)
}

/// Like [`train`], but validation questions and negatives use `truth` when
/// given.
pub fn train_with_truth(
    catalog: &Catalog,
    split: &SplitSpec,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    truth: Option<&GroundTruth>,
) -> Result<TrainOutcome> {
    let resolved = split.resolve(catalog)?;
    let validation = EvalSet::generate(catalog, &resolved.validation_outfits, truth, derive_seed(cfg.seed, 0x7A11))?;
    train_with_validation(catalog, split, encoder, cfg, &validation)
}

/// The full loop with an explicit validation set.
pub fn train_with_validation(
    catalog: &Catalog,
    split: &SplitSpec,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    validation: &EvalSet,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let state = init_encoder(encoder)?;
    train_from(state, catalog, split, cfg, validation)
}

/// Continues from an existing encoder state.
pub fn train_from(
    mut state: EncoderState,
    catalog: &Catalog,
    split: &SplitSpec,
    cfg: &TrainConfig,
    validation: &EvalSet,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let resolved = split.resolve(catalog)?;
    let sampler = TripletSampler::new(catalog, split)?;
    let ssl_items = match cfg.ssl_pool {
        SslPool::Unlabeled => resolved.unlabeled_items.clone(),
        SslPool::AllItems => {
            let mut all = resolved.labeled_items.clone();
            all.extend(&resolved.unlabeled_items);
            all.sort_unstable();
            all.dedup();
            all
        }
    };
    let unlabeled_batch = if cfg.uses_unlabeled() {
        if ssl_items.is_empty() {
            return Err(Error::Config(
                "consistency or pseudo-triplet weight is nonzero but the unlabeled pool is empty".into(),
            ));
        }
        if ssl_items.len() < 3 {
            return Err(Error::Config(format!(
                "unlabeled pool holds {} items; pseudo-triplets need at least 3",
                ssl_items.len()
            )));
        }
        if ssl_items.len() < cfg.unlabeled_batch {
            log::warn!(
                "unlabeled batch {} exceeds the pool of {}; using the whole pool each iteration",
                cfg.unlabeled_batch,
                ssl_items.len()
            );
        }
        cfg.unlabeled_batch.min(ssl_items.len())
    } else {
        0
    };
    let unlabeled_sampler = UnlabeledSampler::new(ssl_items);
    if resolved.labeled_outfits.len() < cfg.labeled_batch {
        log::warn!(
            "{} labeled outfits for a batch of {}; triplets are drawn with replacement",
            resolved.labeled_outfits.len(),
            cfg.labeled_batch
        );
    }

    let iterations = cfg.iterations_for(resolved.labeled_outfits.len());
    let weights = TermWeights::from(&cfg.loss);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x7EA1));
    let mut adam = AdamState::new(state.params().len());
    let mut log = TrainLog {
        config_hash: config_hash(state.config(), cfg, split),
        ..TrainLog::default()
    };
    let mut best: Option<(f64, EncoderState)> = None;

    for epoch in 0..cfg.epochs {
        for iteration in 0..iterations {
            let step = run_iteration(
                &state,
                catalog,
                &sampler,
                &unlabeled_sampler,
                unlabeled_batch,
                cfg,
                weights,
                &mut rng,
            );
            let (parts, grad) = match step {
                Ok(v) => v,
                Err(Error::Numeric(msg)) => {
                    let diagnostic = format!("epoch {epoch}, iteration {iteration}: {msg}");
                    log::error!("training aborted at {diagnostic}");
                    return Ok(abort(state, best, log, diagnostic));
                }
                Err(e) => return Err(e),
            };
            let before = state.params().to_vec();
            if let Err(Error::Numeric(msg)) = adam_step(state.params_mut(), &grad, &mut adam, &cfg.adam) {
                let diagnostic = format!("epoch {epoch}, iteration {iteration}: {msg}");
                log::error!("training aborted at {diagnostic}");
                return Ok(abort(state, best, log, diagnostic));
            }
            // Checkpoints hold f32, so anything past f32::MAX is already lost.
            if state.params().iter().any(|p| !(p.abs() <= f64::from(f32::MAX))) {
                state.params_mut().copy_from_slice(&before);
                let diagnostic = format!("epoch {epoch}, iteration {iteration}: parameters left the f32 range");
                return Ok(abort(state, best, log, diagnostic));
            }
            log::debug!(
                "epoch {epoch} iter {iteration}: L={:.4} (l {:.4}, ss {:.4}, pseudo {:.4}, dropped {})",
                parts.total,
                parts.labeled,
                parts.consistency,
                parts.pseudo,
                parts.dropped
            );
            log.iterations.push(IterationRecord {
                epoch,
                iteration,
                labeled: parts.labeled,
                consistency: parts.consistency,
                pseudo: parts.pseudo,
                total: parts.total,
                pseudo_dropped: parts.dropped,
            });
        }
        let (fitb, auc) = match validation.evaluate(Embedder::Encoder(&state), catalog) {
            Ok(v) => v,
            Err(Error::Numeric(msg)) => {
                let diagnostic = format!("validation after epoch {epoch}: {msg}");
                return Ok(abort(state, best, log, diagnostic));
            }
            Err(e) => return Err(e),
        };
        log::info!("epoch {epoch}: validation AUC {auc:.4}, FITB {fitb:?}");
        log.epochs.push(EpochRecord {
            epoch,
            val_compat_auc: auc,
            val_fitb_accuracy: fitb,
        });
        if best.as_ref().is_none_or(|(b, _)| auc > *b) {
            best = Some((auc, state.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    let best = best.map(|(_, s)| s).unwrap_or_else(|| state.clone());
    Ok(TrainOutcome {
        best,
        last: state,
        log,
        aborted: None,
    })
}

fn abort(state: EncoderState, best: Option<(f64, EncoderState)>, log: TrainLog, diagnostic: String) -> TrainOutcome {
    TrainOutcome {
        best: best.map(|(_, s)| s).unwrap_or_else(|| state.clone()),
        last: state,
        log,
        aborted: Some(diagnostic),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    state: &EncoderState,
    catalog: &Catalog,
    sampler: &TripletSampler<'_>,
    unlabeled_sampler: &UnlabeledSampler,
    unlabeled_batch: usize,
    cfg: &TrainConfig,
    weights: TermWeights,
    rng: &mut Rng,
) -> Result<(ObjectiveParts, Vec<f64>)> {
    let labeled = sampler.sample(cfg.labeled_batch, rng);
    let image = |i: usize| &catalog.item(i).image;
    let mut batch = Batch {
        anchors: labeled.triplets.iter().map(|t| image(t.anchor)).collect(),
        positives: labeled.triplets.iter().map(|t| image(t.positive)).collect(),
        negatives: labeled.triplets.iter().map(|t| image(t.negative)).collect(),
        ..Batch::default()
    };
    if unlabeled_batch > 0 {
        let ub = unlabeled_sampler.sample(unlabeled_batch, rng)?;
        batch.unlabeled = ub.items.iter().map(|&i| image(i)).collect();
        if weights.consistency != 0.0 {
            for img in &batch.unlabeled {
                batch.shape_views.push(shape_transform(img, &cfg.shape, rng));
                batch.appearance_views.push(appearance_transform(img, &cfg.appearance, rng));
            }
        }
    }
    objective_gradient(state, &batch, cfg.loss.margin, weights, None)
}
