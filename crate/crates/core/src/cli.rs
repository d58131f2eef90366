//! Command-line front end.
//!
//! Every command reads an optional flat TOML experiment file (`--config`),
//! applies its own flags on top and writes its artifacts under `--out`
//! together with the fully resolved `config.toml`. Artifacts carry a config
//! hash: checkpoints and metrics in a field, CSV files in a leading `#`
//! comment, plots in a PNG text chunk.
//!
//! Config keys (all optional; unknown keys are rejected):
//!
//! | key | meaning |
//! |-----|---------|
//! | `preset` | `"desk"` (default) or `"full"`: the base values below are taken from |
//! | `seed` | master seed; every `*_seed` key defaults to it |
//! | `data` | dataset directory for `split`, `train`, `eval`, `sweep`, `embed-export` |
//! | `outfits`, `themes`, `image_size`, `items_min`, `items_max` | corpus shape for `gen-data` |
//! | `noise_std`, `hue_tolerance`, `saturation_min/max`, `value_min/max` | corpus appearance |
//! | `data_seed` | corpus generator seed |
//! | `alpha`, `split_seed` | labeled fraction of train outfits and split seed |
//! | `embedding_dim`, `init_seed` | encoder |
//! | `labeled_batch`, `unlabeled_batch`, `lr`, `epochs`, `iterations_per_epoch` | optimisation |
//! | `margin`, `lambda_ss`, `lambda_pseudo`, `ssl_pool`, `train_seed` | objective |
//! | `eval_seed` | FITB question and negative-outfit generation |

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    load_polyvore_layout, read_splits_file, split_catalog, write_catalog, write_json_file, Catalog, SplitSpec,
    SplitsFile, SPLITS_FILE,
};
use crate::encoder::{checkpoint_bytes, load_checkpoint, parse_checkpoint, EncoderConfig, DEFAULT_BINS};
use crate::evaluation::{embed_items, Embedder, EvalSet, Metrics};
use crate::synthcorpus::{generate_corpus, read_ground_truth, write_ground_truth, GroundTruth, SynthSpec, GROUND_TRUTH_FILE};
use crate::training::{config_hash, train_with_validation, SslPool, TrainConfig};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.ndjson";
pub const VAL_METRICS: &str = "val_metrics.json";
pub const METRICS: &str = "metrics.json";
pub const EMBEDDINGS: &str = "embeddings.csv";

#[derive(Debug, Parser)]
#[command(name = "outfit-compat", version, about = "Semi-supervised outfit compatibility: data, training, evaluation")]
pub struct Cli {
    /// Master seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Flat TOML experiment file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus in the dataset layout.
    GenData(GenDataArgs),
    /// Split a dataset into labeled outfits and an unlabeled item pool.
    Split(SplitArgs),
    /// Train an encoder; writes best/last checkpoints, the log and validation metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint or the colour-histogram baseline.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of label fractions or unlabeled batch sizes.
    Sweep(SweepArgs),
    /// Write item embeddings as CSV.
    EmbedExport(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of outfits.
    #[arg(long)]
    pub outfits: Option<usize>,
    /// Number of colour themes (the planted compatibility classes).
    #[arg(long)]
    pub themes: Option<usize>,
    /// Side length of the square item images in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Label fraction recorded in the dataset's `splits.json`.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset directory; overrides `data` in the config file.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Fraction of train outfits that keep their labels.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// A `splits.json` written by `split`; otherwise the split is derived from `alpha`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Label fraction for a fresh split when no split file is given.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    ColorHist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Test,
    Validation,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Alpha,
    UnlabeledBatch,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Alpha => "alpha",
            SweepKind::UnlabeledBatch => "unlabeled_batch",
        }
    }

    fn default_grid(self) -> Vec<f64> {
        match self {
            SweepKind::Alpha => vec![0.05, 0.25, 0.5, 1.0],
            SweepKind::UnlabeledBatch => vec![64.0, 256.0, 1024.0],
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub kind: SweepKind,
    #[command(flatten)]
    pub data: DataArg,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Restrict to the items of the test outfits.
    #[arg(long)]
    pub test_only: bool,
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

/// The flat experiment file. Absent keys fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,

    pub outfits: Option<usize>,
    pub themes: Option<usize>,
    pub image_size: Option<usize>,
    pub items_min: Option<usize>,
    pub items_max: Option<usize>,
    pub noise_std: Option<f32>,
    pub hue_tolerance: Option<f32>,
    pub saturation_min: Option<f32>,
    pub saturation_max: Option<f32>,
    pub value_min: Option<f32>,
    pub value_max: Option<f32>,
    pub data_seed: Option<u64>,

    pub alpha: Option<f64>,
    pub split_seed: Option<u64>,

    pub embedding_dim: Option<usize>,
    pub init_seed: Option<u64>,

    pub labeled_batch: Option<usize>,
    pub unlabeled_batch: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub iterations_per_epoch: Option<usize>,
    pub margin: Option<f64>,
    pub lambda_ss: Option<f64>,
    pub lambda_pseudo: Option<f64>,
    pub ssl_pool: Option<SslPool>,
    pub train_seed: Option<u64>,

    pub eval_seed: Option<u64>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub preset: Preset,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub synth: SynthSpec,
    pub alpha: f64,
    pub split_seed: u64,
    pub embedding_dim: usize,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub eval_seed: u64,
}

impl Preset {
    fn base(self) -> (SynthSpec, TrainConfig, usize, f64) {
        match self {
            Preset::Desk => (SynthSpec::hard(), TrainConfig::desk_scale(), 32, 0.05),
            Preset::Full => (SynthSpec::hard(), TrainConfig::default(), 64, 0.05),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn resolve(&self) -> Result<Experiment> {
        let preset = self.preset.unwrap_or_default();
        let (mut synth, mut train, dim, alpha) = preset.base();
        let seed = self.seed.unwrap_or(0);
        macro_rules! set {
            ($target:expr, $key:ident) => {
                if let Some(v) = self.$key {
                    $target = v;
                }
            };
        }
        let base_themes = synth.n_themes as f32;
        set!(synth.n_outfits, outfits);
        set!(synth.n_themes, themes);
        set!(synth.image_size, image_size);
        set!(synth.items_per_outfit[0], items_min);
        set!(synth.items_per_outfit[1], items_max);
        set!(synth.noise_std, noise_std);
        set!(synth.saturation_range[0], saturation_min);
        set!(synth.saturation_range[1], saturation_max);
        set!(synth.value_range[0], value_min);
        set!(synth.value_range[1], value_max);
        match (self.hue_tolerance, synth.hue_tolerance) {
            (Some(t), _) => synth.hue_tolerance = Some(t),
            // keep the preset's band-to-gap ratio when only the theme count changes
            (None, Some(t)) if self.themes.is_some() => {
                synth.hue_tolerance = Some(t * base_themes / synth.n_themes as f32);
            }
            _ => {}
        }
        synth.seed = self.data_seed.unwrap_or(seed);

        set!(train.labeled_batch, labeled_batch);
        set!(train.unlabeled_batch, unlabeled_batch);
        set!(train.adam.lr, lr);
        set!(train.epochs, epochs);
        if self.iterations_per_epoch.is_some() {
            train.iterations_per_epoch = self.iterations_per_epoch;
        }
        set!(train.loss.margin, margin);
        set!(train.loss.lambda_ss, lambda_ss);
        set!(train.loss.lambda_pseudo, lambda_pseudo);
        set!(train.ssl_pool, ssl_pool);
        train.seed = self.train_seed.unwrap_or(seed);

        let exp = Experiment {
            preset,
            seed,
            data: self.data.clone(),
            synth,
            alpha: self.alpha.unwrap_or(alpha),
            split_seed: self.split_seed.unwrap_or(seed),
            embedding_dim: self.embedding_dim.unwrap_or(dim),
            init_seed: self.init_seed.unwrap_or(seed),
            train,
            eval_seed: self.eval_seed.unwrap_or(seed),
        };
        exp.validate()?;
        Ok(exp)
    }
}

impl Experiment {
    fn validate(&self) -> Result<()> {
        let usage = |e: Error| match e {
            Error::Parameter(m) | Error::Config(m) => Error::Config(m),
            other => other,
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        self.train.validate().map_err(usage)?;
        self.encoder(self.synth.image_size).validate().map_err(usage)
    }

    /// Every key spelled out, so reloading reproduces this experiment.
    pub fn to_config(&self) -> ExperimentConfig {
        let s = &self.synth;
        let t = &self.train;
        ExperimentConfig {
            preset: Some(self.preset),
            seed: Some(self.seed),
            data: self.data.clone(),
            outfits: Some(s.n_outfits),
            themes: Some(s.n_themes),
            image_size: Some(s.image_size),
            items_min: Some(s.items_per_outfit[0]),
            items_max: Some(s.items_per_outfit[1]),
            noise_std: Some(s.noise_std),
            hue_tolerance: s.hue_tolerance,
            saturation_min: Some(s.saturation_range[0]),
            saturation_max: Some(s.saturation_range[1]),
            value_min: Some(s.value_range[0]),
            value_max: Some(s.value_range[1]),
            data_seed: Some(s.seed),
            alpha: Some(self.alpha),
            split_seed: Some(self.split_seed),
            embedding_dim: Some(self.embedding_dim),
            init_seed: Some(self.init_seed),
            labeled_batch: Some(t.labeled_batch),
            unlabeled_batch: Some(t.unlabeled_batch),
            lr: Some(t.adam.lr),
            epochs: Some(t.epochs),
            iterations_per_epoch: t.iterations_per_epoch,
            margin: Some(t.loss.margin),
            lambda_ss: Some(t.loss.lambda_ss),
            lambda_pseudo: Some(t.loss.lambda_pseudo),
            ssl_pool: Some(t.ssl_pool),
            train_seed: Some(t.seed),
            eval_seed: Some(self.eval_seed),
        }
    }

    pub fn encoder(&self, input_size: usize) -> EncoderConfig {
        EncoderConfig::tiny(self.embedding_dim, input_size, self.init_seed)
    }

    /// The encoder for a catalog's (square) image size.
    pub fn encoder_for(&self, catalog: &Catalog) -> Result<EncoderConfig> {
        match catalog.image_size() {
            Some((h, w)) if h == w => Ok(self.encoder(h)),
            Some((h, w)) => Err(Error::Data(format!("images must be square, got {h}x{w}"))),
            None => Err(Error::Data("items have differing image sizes".into())),
        }
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset: pass --data or set `data` in the config".into()))
    }
}

/// SHA-256 of a value's JSON form.
pub fn hash_of<T: Serialize + ?Sized>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let data = |arg: &DataArg, cfg: &mut ExperimentConfig| {
        if arg.data.is_some() {
            cfg.data = arg.data.clone();
        }
    };
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenData(a) => {
            cfg.outfits = a.outfits.or(cfg.outfits);
            cfg.themes = a.themes.or(cfg.themes);
            cfg.image_size = a.image_size.or(cfg.image_size);
            cfg.alpha = a.alpha.or(cfg.alpha);
            cmd_gen_data(&cfg.resolve()?, out)
        }
        Command::Split(a) => {
            data(&a.data, &mut cfg);
            cfg.alpha = a.alpha.or(cfg.alpha);
            cmd_split(&cfg.resolve()?, out)
        }
        Command::Train(a) => {
            data(&a.data, &mut cfg);
            cfg.alpha = a.alpha.or(cfg.alpha);
            cmd_train(&cfg.resolve()?, a.split.as_deref(), out)
        }
        Command::Eval(a) => {
            data(&a.data, &mut cfg);
            let model = match (&a.checkpoint, a.baseline) {
                (Some(path), _) => Model::Checkpoint(path),
                (None, Some(Baseline::ColorHist)) => Model::ColorHist,
                (None, None) => return Err(Error::Config("pass --checkpoint or --baseline".into())),
            };
            cmd_eval(&cfg.resolve()?, model, a.split.as_deref(), a.subset, out).map(|_| ())
        }
        Command::Sweep(a) => {
            data(&a.data, &mut cfg);
            let grid = a.grid.clone().unwrap_or_else(|| a.kind.default_grid());
            cmd_sweep(&cfg.resolve()?, a.kind, &grid, out).map(|_| ())
        }
        Command::EmbedExport(a) => {
            data(&a.data, &mut cfg);
            cmd_embed_export(&cfg.resolve()?, &a.checkpoint, a.test_only, a.split.as_deref(), out)
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the resolved experiment with the artifact's hash as a comment.
fn write_config(exp: &Experiment, dir: &Path, hash: &str) -> Result<()> {
    let body = toml::to_string(&exp.to_config()).expect("config serializes");
    write_text(&dir.join(CONFIG_FILE), &format!("# config_hash = {hash}\n{body}"))
}

struct Dataset {
    catalog: Catalog,
    truth: Option<GroundTruth>,
}

fn load_dataset(exp: &Experiment) -> Result<Dataset> {
    let root = exp.data_dir()?;
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset directory {} does not exist", root.display())));
    }
    let catalog = load_polyvore_layout(root)?;
    let truth_path = root.join(GROUND_TRUTH_FILE);
    let truth = if truth_path.exists() {
        Some(read_ground_truth(&truth_path)?)
    } else {
        None
    };
    Ok(Dataset { catalog, truth })
}

fn load_split(exp: &Experiment, catalog: &Catalog, file: Option<&Path>) -> Result<SplitSpec> {
    match file {
        Some(path) => SplitSpec::from_file(catalog, &read_splits_file(path)?),
        None => split_catalog(catalog, exp.alpha, exp.split_seed),
    }
}

/// `gen-data`: corpus layout, `ground_truth.json` and a `splits.json` that
/// fixes the validation and test outfits.
pub fn cmd_gen_data(exp: &Experiment, out: &Path) -> Result<()> {
    let (catalog, truth) = generate_corpus(&exp.synth)?;
    let split = split_catalog(&catalog, exp.alpha, exp.split_seed)?;
    let hash = hash_of(&serde_json::json!({ "synth": exp.synth, "split": split }));
    create_dir(out)?;
    write_catalog(&catalog, out, None)?;
    write_ground_truth(&out.join(GROUND_TRUTH_FILE), &truth)?;
    write_json_file(
        &out.join(SPLITS_FILE),
        &SplitsFile {
            config_hash: Some(hash.clone()),
            ..SplitsFile::from(&split)
        },
    )?;
    write_config(exp, out, &hash)?;
    log::info!("wrote {} outfits to {}", catalog.outfits().len(), out.display());
    Ok(())
}

/// `split`: writes `splits.json` for the configured label fraction.
pub fn cmd_split(exp: &Experiment, out: &Path) -> Result<()> {
    let ds = load_dataset(exp)?;
    let split = split_catalog(&ds.catalog, exp.alpha, exp.split_seed)?;
    let hash = hash_of(&split);
    create_dir(out)?;
    write_json_file(
        &out.join(SPLITS_FILE),
        &SplitsFile {
            config_hash: Some(hash.clone()),
            ..SplitsFile::from(&split)
        },
    )?;
    write_config(exp, out, &hash)
}

fn checkpoint_digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// What a training run left on disk.
pub struct TrainArtifacts {
    pub config_hash: String,
    pub best_checkpoint: Vec<u8>,
    pub val_metrics: Metrics,
}

fn train_into(exp: &Experiment, ds: &Dataset, split: &SplitSpec, out: &Path) -> Result<TrainArtifacts> {
    let catalog = &ds.catalog;
    let encoder = exp.encoder_for(catalog)?;
    let hash = config_hash(&encoder, &exp.train, split);
    create_dir(out)?;
    write_config(exp, out, &hash)?;
    let resolved = split.resolve(catalog)?;
    let validation = EvalSet::generate(catalog, &resolved.validation_outfits, ds.truth.as_ref(), exp.eval_seed)?;
    let outcome = train_with_validation(catalog, split, &encoder, &exp.train, &validation)?;

    let best = checkpoint_bytes(&outcome.best, &hash);
    let last = checkpoint_bytes(&outcome.last, &hash);
    write_bytes(&out.join(BEST_CHECKPOINT), &best)?;
    write_bytes(&out.join(LAST_CHECKPOINT), &last)?;
    outcome.log.write_ndjson(&out.join(TRAIN_LOG))?;
    if let Some(msg) = outcome.aborted {
        return Err(Error::Numeric(format!(
            "training aborted at {msg}; last good parameters saved to {}",
            out.join(LAST_CHECKPOINT).display()
        )));
    }

    let (state, _) = parse_checkpoint(&best)?;
    let (fitb, auc) = validation.evaluate(Embedder::Encoder(&state), catalog)?;
    let val_metrics = Metrics {
        fitb_accuracy: fitb,
        compat_auc: auc,
        n_questions: validation.questions.len(),
        n_compat: validation.examples.len(),
        seed: exp.eval_seed,
        checkpoint: checkpoint_digest(&best),
        config_hash: Some(hash.clone()),
    };
    write_json_file(&out.join(VAL_METRICS), &val_metrics)?;
    Ok(TrainArtifacts {
        config_hash: hash,
        best_checkpoint: best,
        val_metrics,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `train`: checkpoints, `train_log.ndjson`, `val_metrics.json`.
pub fn cmd_train(exp: &Experiment, split_file: Option<&Path>, out: &Path) -> Result<()> {
    let ds = load_dataset(exp)?;
    let split = load_split(exp, &ds.catalog, split_file)?;
    train_into(exp, &ds, &split, out).map(|_| ())
}

pub enum Model<'a> {
    Checkpoint(&'a Path),
    ColorHist,
}

fn evaluate_into(
    exp: &Experiment,
    ds: &Dataset,
    split: &SplitSpec,
    model: Model<'_>,
    subset: Subset,
    out: &Path,
) -> Result<Metrics> {
    let catalog = &ds.catalog;
    let resolved = split.resolve(catalog)?;
    let outfits = match subset {
        Subset::Test => &resolved.test_outfits,
        Subset::Validation => &resolved.validation_outfits,
    };
    let set = EvalSet::generate(catalog, outfits, ds.truth.as_ref(), exp.eval_seed)?;
    let (fitb, auc, checkpoint, hash) = match model {
        Model::Checkpoint(path) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let (state, header) = parse_checkpoint(&bytes)?;
            let (fitb, auc) = set.evaluate(Embedder::Encoder(&state), catalog)?;
            (fitb, auc, checkpoint_digest(&bytes), header.config_hash)
        }
        Model::ColorHist => {
            let embedder = Embedder::ColorHistogram {
                bins_per_channel: DEFAULT_BINS,
            };
            let (fitb, auc) = set.evaluate(embedder, catalog)?;
            let hash = hash_of(&serde_json::json!({ "baseline": "color-hist", "bins": DEFAULT_BINS, "split": split }));
            (fitb, auc, "color-hist".to_string(), hash)
        }
    };
    let metrics = Metrics {
        fitb_accuracy: fitb,
        compat_auc: auc,
        n_questions: set.questions.len(),
        n_compat: set.examples.len(),
        seed: exp.eval_seed,
        checkpoint,
        config_hash: Some(hash),
    };
    create_dir(out)?;
    write_json_file(&out.join(METRICS), &metrics)?;
    Ok(metrics)
}

/// `eval`: writes `metrics.json` for the test (or validation) outfits.
pub fn cmd_eval(
    exp: &Experiment,
    model: Model<'_>,
    split_file: Option<&Path>,
    subset: Subset,
    out: &Path,
) -> Result<Metrics> {
    let ds = load_dataset(exp)?;
    let split = load_split(exp, &ds.catalog, split_file)?;
    evaluate_into(exp, &ds, &split, model, subset, out)
}

/// One row of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// `Err` holds the failure message.
    pub metrics: std::result::Result<Metrics, String>,
}

fn check_grid(kind: SweepKind, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for &v in grid {
        let ok = match kind {
            SweepKind::Alpha => v > 0.0 && v <= 1.0,
            SweepKind::UnlabeledBatch => v >= 3.0 && v.fract() == 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("invalid {} grid value {v}", kind.name())));
        }
    }
    Ok(())
}

fn json_number(v: f64) -> String {
    serde_json::to_string(&v).expect("finite number")
}

/// `sweep`: one train+eval per grid value under `<out>/<kind>_<value>/`,
/// then `sweep_<kind>.csv` and a line plot per metric. A failing point is
/// recorded and the sweep moves on.
pub fn cmd_sweep(exp: &Experiment, kind: SweepKind, grid: &[f64], out: &Path) -> Result<Vec<SweepPoint>> {
    check_grid(kind, grid)?;
    let ds = load_dataset(exp)?;
    create_dir(out)?;
    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let dir = out.join(format!("{}_{}", kind.name(), json_number(value)));
        let result = sweep_point(exp, &ds, kind, value, &dir);
        if let Err(e) = &result {
            log::warn!("sweep point {}={value} failed: {e}", kind.name());
        }
        points.push(SweepPoint {
            value,
            metrics: result.map_err(|e| e.to_string()),
        });
    }
    let sweep_hash = hash_of(&serde_json::json!({
        "kind": kind.name(),
        "grid": grid,
        "points": points.iter().map(|p| p.metrics.as_ref().ok().and_then(|m| m.config_hash.clone())).collect::<Vec<_>>(),
    }));
    write_sweep_csv(&out.join(format!("sweep_{}.csv", kind.name())), kind, &points, &sweep_hash)?;
    for (metric, pick) in [
        ("compat_auc", (|m: &Metrics| Some(m.compat_auc)) as fn(&Metrics) -> Option<f64>),
        ("fitb_accuracy", |m: &Metrics| m.fitb_accuracy),
    ] {
        let series: Vec<Option<f64>> = points.iter().map(|p| p.metrics.as_ref().ok().and_then(pick)).collect();
        let path = out.join(format!("sweep_{}_{metric}.png", kind.name()));
        write_line_plot(&path, &series, &sweep_hash)?;
    }
    Ok(points)
}

fn sweep_point(exp: &Experiment, ds: &Dataset, kind: SweepKind, value: f64, dir: &Path) -> Result<Metrics> {
    let mut exp = exp.clone();
    match kind {
        SweepKind::Alpha => exp.alpha = value,
        SweepKind::UnlabeledBatch => exp.train.unlabeled_batch = value as usize,
    }
    let split = split_catalog(&ds.catalog, exp.alpha, exp.split_seed)?;
    if exp.train.uses_unlabeled() && exp.train.ssl_pool == SslPool::Unlabeled && split.unlabeled_item_ids.is_empty() {
        log::warn!("no unlabeled items at {}={value}; unlabeled terms draw from all training items", kind.name());
        exp.train.ssl_pool = SslPool::AllItems;
    }
    let trained = train_into(&exp, ds, &split, dir)?;
    let ckpt = dir.join(BEST_CHECKPOINT);
    let metrics = evaluate_into(&exp, ds, &split, Model::Checkpoint(&ckpt), Subset::Test, dir)?;
    debug_assert_eq!(metrics.config_hash.as_deref(), Some(trained.config_hash.as_str()));
    Ok(metrics)
}

fn write_sweep_csv(path: &Path, kind: SweepKind, points: &[SweepPoint], hash: &str) -> Result<()> {
    let mut buf = format!("# config_hash = {hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        w.write_record([kind.name(), "compat_auc", "fitb_accuracy", "status", "config_hash"])
            .map_err(io)?;
        for p in points {
            let value = json_number(p.value);
            let row = match &p.metrics {
                Ok(m) => [
                    value,
                    json_number(m.compat_auc),
                    m.fitb_accuracy.map(json_number).unwrap_or_default(),
                    "ok".to_string(),
                    m.config_hash.clone().unwrap_or_default(),
                ],
                Err(msg) => [value, String::new(), String::new(), format!("failed: {msg}"), String::new()],
            };
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_bytes(path, &buf)
}

const PLOT_W: usize = 480;
const PLOT_H: usize = 320;
const PLOT_MARGIN: usize = 32;

/// A minimal line chart: grid values evenly spaced on x, metric on y with
/// gridlines every 0.1. Missing points break the line.
fn write_line_plot(path: &Path, series: &[Option<f64>], hash: &str) -> Result<()> {
    let mut px = vec![255u8; PLOT_W * PLOT_H * 3];
    let mut put = |x: i64, y: i64, rgb: [u8; 3]| {
        if (0..PLOT_W as i64).contains(&x) && (0..PLOT_H as i64).contains(&y) {
            let i = (y as usize * PLOT_W + x as usize) * 3;
            px[i..i + 3].copy_from_slice(&rgb);
        }
    };
    let present: Vec<f64> = series.iter().flatten().copied().collect();
    let (lo, hi) = match present.iter().copied().fold(None, |acc: Option<(f64, f64)>, v| {
        Some(acc.map_or((v, v), |(a, b)| (a.min(v), b.max(v))))
    }) {
        Some((a, b)) => (((a - 0.05) * 10.0).floor() / 10.0, ((b + 0.05) * 10.0).ceil() / 10.0),
        None => (0.0, 1.0),
    };
    let (x0, x1) = (PLOT_MARGIN as f64, (PLOT_W - PLOT_MARGIN) as f64);
    let (y0, y1) = ((PLOT_H - PLOT_MARGIN) as f64, PLOT_MARGIN as f64);
    let to_y = |v: f64| y0 + (v - lo) / (hi - lo).max(1e-9) * (y1 - y0);
    let to_x = |i: usize| {
        if series.len() < 2 {
            (x0 + x1) / 2.0
        } else {
            x0 + i as f64 / (series.len() - 1) as f64 * (x1 - x0)
        }
    };
    let ticks = ((hi - lo) * 10.0).round() as usize;
    for t in 0..=ticks {
        let y = to_y(lo + t as f64 / 10.0).round() as i64;
        for x in x0 as i64..=x1 as i64 {
            put(x, y, [220, 220, 220]);
        }
    }
    for x in x0 as i64..=x1 as i64 {
        put(x, y0 as i64, [0, 0, 0]);
    }
    for y in y1 as i64..=y0 as i64 {
        put(x0 as i64, y, [0, 0, 0]);
    }
    let mut prev: Option<(f64, f64)> = None;
    for (i, v) in series.iter().enumerate() {
        let Some(v) = v else {
            prev = None;
            continue;
        };
        let (x, y) = (to_x(i), to_y(*v));
        if let Some((px0, py0)) = prev {
            let steps = ((x - px0).abs().max((y - py0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let f = s as f64 / steps as f64;
                put((px0 + f * (x - px0)).round() as i64, (py0 + f * (y - py0)).round() as i64, [31, 87, 180]);
            }
        }
        for dy in -2..=2 {
            for dx in -2..=2 {
                put(x.round() as i64 + dx, y.round() as i64 + dy, [200, 40, 40]);
            }
        }
        prev = Some((x, y));
    }

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let png_err = |e: png::EncodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), PLOT_W as u32, PLOT_H as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("config_hash".into(), hash.into()).map_err(png_err)?;
    enc.add_text_chunk("y_range".into(), format!("{lo} {hi}")).map_err(png_err)?;
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&px).map_err(png_err)
}

/// `embed-export`: `item_id,category[,theme],e0..e{D-1}` rows.
pub fn cmd_embed_export(
    exp: &Experiment,
    checkpoint: &Path,
    test_only: bool,
    split_file: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let ds = load_dataset(exp)?;
    let catalog = &ds.catalog;
    let (state, header) = load_checkpoint(checkpoint)?;
    let items: Vec<usize> = if test_only {
        let split = load_split(exp, catalog, split_file)?;
        let resolved = split.resolve(catalog)?;
        let mut v: Vec<usize> = resolved
            .test_outfits
            .iter()
            .flat_map(|&o| catalog.outfit_items(o).iter().copied())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    } else {
        (0..catalog.items().len()).collect()
    };
    let emb = embed_items(Embedder::Encoder(&state), catalog, &items)?;

    let path = out.join(EMBEDDINGS);
    let mut buf = format!("# config_hash = {}\n", header.config_hash).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut head = vec!["item_id".to_string(), "category".to_string()];
        if ds.truth.is_some() {
            head.push("theme".into());
        }
        head.extend((0..state.config().embedding_dim).map(|d| format!("e{d}")));
        w.write_record(&head).map_err(io)?;
        for (row, &i) in items.iter().enumerate() {
            let item = catalog.item(i);
            let mut rec = vec![item.id.clone(), item.category.clone()];
            if let Some(truth) = &ds.truth {
                rec.push(truth.get(&item.id).map(|t| t.to_string()).unwrap_or_default());
            }
            rec.extend(emb.matrix().row(row).iter().map(|&v| json_number(v)));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    create_dir(out)?;
    write_bytes(&path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig {
            seed: Some(5),
            alpha: Some(0.25),
            lr: Some(1e-3),
            split_seed: Some(9),
            ..Default::default()
        };
        let exp = cfg.resolve().unwrap();
        assert_eq!(exp.split_seed, 9);
        assert_eq!(exp.init_seed, 5);
        assert_eq!(exp.train.seed, 5);
        let text = toml::to_string(&exp.to_config()).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.resolve().unwrap(), exp);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("alpah = 0.5").is_err());
        assert!(toml::from_str::<ExperimentConfig>("alpha = 0.5\npreset = \"full\"").is_ok());
    }

    #[test]
    fn presets_differ_in_training_scale() {
        let desk = ExperimentConfig::default().resolve().unwrap();
        let full = ExperimentConfig {
            preset: Some(Preset::Full),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(full.train, TrainConfig::default());
        assert_ne!(desk.train, full.train);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        for cfg in [
            ExperimentConfig { alpha: Some(0.0), ..Default::default() },
            ExperimentConfig { lr: Some(-1.0), ..Default::default() },
            ExperimentConfig { unlabeled_batch: Some(2), ..Default::default() },
        ] {
            assert_eq!(cfg.resolve().unwrap_err().exit_code(), 1);
        }
    }

    #[test]
    fn grid_checks() {
        assert!(check_grid(SweepKind::Alpha, &[0.05, 1.0]).is_ok());
        assert!(check_grid(SweepKind::Alpha, &[1.5]).is_err());
        assert!(check_grid(SweepKind::UnlabeledBatch, &[2.0]).is_err());
        assert!(check_grid(SweepKind::UnlabeledBatch, &[64.5]).is_err());
        assert!(check_grid(SweepKind::UnlabeledBatch, &[]).is_err());
    }

    #[test]
    fn plot_is_a_png_with_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        write_line_plot(&path, &[Some(0.8), None, Some(0.9), Some(0.85)], "abc").unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(&path).unwrap()));
        let reader = decoder.read_info().unwrap();
        let info = reader.info();
        assert_eq!((info.width, info.height), (PLOT_W as u32, PLOT_H as u32));
        assert!(info.uncompressed_latin1_text.iter().any(|t| t.keyword == "config_hash" && t.text == "abc"));
    }

    #[test]
    fn help_and_usage_exit_codes() {
        assert_eq!(run(["outfit-compat", "--help"]), 0);
        assert_eq!(run(["outfit-compat", "no-such-command"]), 1);
        assert_eq!(run(["outfit-compat", "eval"]), 1);
    }
}
