use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use outfit_compat::dataset::load_polyvore_layout;
use outfit_compat::encoder::load_checkpoint;
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_outfit-compat");

fn run(args: &[&str]) -> i32 {
    let out = Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs");
    out.status.code().expect("exit code")
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
    data: String,
}

impl Fixture {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("exp.toml");
        fs::write(
            &config,
            format!("outfits = 120\nimage_size = 16\nembedding_dim = 8\nepochs = 2\niterations_per_epoch = 2\nlabeled_batch = 8\nunlabeled_batch = 16\n{extra}"),
        )
        .unwrap();
        let data = root.join("data");
        let f = Self {
            _dir: dir,
            config: config.to_str().unwrap().to_string(),
            data: data.to_str().unwrap().to_string(),
            root,
        };
        assert_eq!(f.cmd(&["--out", &f.data, "gen-data"]), 0);
        f
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }

    fn cmd(&self, args: &[&str]) -> i32 {
        let mut all = vec!["--config", self.config.as_str()];
        all.extend_from_slice(args);
        run(&all)
    }
}

fn tree_digest(root: &Path) -> String {
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(root).unwrap().to_str().unwrap().as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    hex::encode(h.finalize())
}

#[test]
fn gen_data_round_trips_and_is_deterministic() {
    let f = Fixture::new("");
    let catalog = load_polyvore_layout(Path::new(&f.data)).unwrap();
    assert_eq!(catalog.outfits().len(), 120);
    assert!(catalog.held_out().is_some());
    let again = f.path("again");
    assert_eq!(f.cmd(&["--out", &again, "gen-data"]), 0);
    assert_eq!(tree_digest(Path::new(&f.data)), tree_digest(Path::new(&again)));
    let other = f.path("other");
    assert_eq!(f.cmd(&["--seed", "1", "--out", &other, "gen-data"]), 0);
    assert_ne!(tree_digest(Path::new(&f.data)), tree_digest(Path::new(&other)));
}

#[test]
fn exit_codes() {
    let f = Fixture::new("");
    assert_eq!(f.cmd(&["--out", &f.path("x"), "gen-data", "--themes", "1"]), 1);
    assert_eq!(f.cmd(&["--out", &f.path("x"), "train", "--data", &f.path("missing")]), 2);
    assert_eq!(run(&["--out", &f.path("x"), "train"]), 1);
    assert_eq!(run(&["no-such-command"]), 1);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    let corrupt = f.path("corrupt.ckpt");
    fs::write(&corrupt, b"not a checkpoint").unwrap();
    assert_eq!(f.cmd(&["--out", &f.path("x"), "eval", "--data", &f.data, "--checkpoint", &corrupt]), 2);
}

#[test]
fn numeric_failure_saves_last_good_checkpoint() {
    let f = Fixture::new("lr = 1e300\n");
    let out = f.path("train");
    assert_eq!(f.cmd(&["--out", &out, "train", "--data", &f.data]), 3);
    let (state, _) = load_checkpoint(&Path::new(&out).join("last.ckpt")).unwrap();
    assert!(state.params().iter().all(|p| p.is_finite()));
    assert!(Path::new(&out).join("train_log.ndjson").exists());
}

#[test]
fn supervised_baseline_at_full_labels() {
    let f = Fixture::new("lambda_ss = 0.0\nlambda_pseudo = 0.0\n");
    let out = f.path("train");
    assert_eq!(f.cmd(&["--out", &out, "train", "--data", &f.data, "--alpha", "1.0"]), 0);
    for file in ["best.ckpt", "last.ckpt", "train_log.ndjson", "val_metrics.json", "config.toml"] {
        assert!(Path::new(&out).join(file).exists(), "{file}");
    }
}

#[test]
fn eval_is_repeatable_and_carries_the_hash() {
    let f = Fixture::new("");
    let train = f.path("train");
    assert_eq!(f.cmd(&["--out", &train, "train", "--data", &f.data]), 0);
    let ckpt = format!("{train}/best.ckpt");
    let (a, b) = (f.path("eval_a"), f.path("eval_b"));
    assert_eq!(f.cmd(&["--out", &a, "eval", "--data", &f.data, "--checkpoint", &ckpt]), 0);
    assert_eq!(f.cmd(&["--out", &b, "eval", "--data", &f.data, "--checkpoint", &ckpt]), 0);
    let ma = fs::read(format!("{a}/metrics.json")).unwrap();
    assert_eq!(ma, fs::read(format!("{b}/metrics.json")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    for key in ["fitb_accuracy", "compat_auc", "n_questions", "n_compat", "seed", "checkpoint"] {
        assert!(m.get(key).is_some(), "{key}");
    }
    let (_, header) = load_checkpoint(Path::new(&ckpt)).unwrap();
    assert_eq!(m["config_hash"], header.config_hash.as_str());
    let config = fs::read_to_string(format!("{train}/config.toml")).unwrap();
    assert!(config.starts_with(&format!("# config_hash = {}", header.config_hash)));

    let base = f.path("base");
    assert_eq!(f.cmd(&["--out", &base, "eval", "--data", &f.data, "--baseline", "color-hist"]), 0);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(format!("{base}/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["checkpoint"], "color-hist");
}

#[test]
fn saved_config_reproduces_the_run() {
    let f = Fixture::new("");
    let first = f.path("first");
    assert_eq!(f.cmd(&["--seed", "4", "--out", &first, "train", "--data", &f.data]), 0);
    let second = f.path("second");
    let saved = format!("{first}/config.toml");
    assert_eq!(run(&["--config", &saved, "--out", &second, "train"]), 0);
    for file in ["best.ckpt", "val_metrics.json", "train_log.ndjson"] {
        assert_eq!(fs::read(format!("{first}/{file}")).unwrap(), fs::read(format!("{second}/{file}")).unwrap(), "{file}");
    }
}

#[test]
fn sweeps_write_csv_rows_matching_point_metrics() {
    let f = Fixture::new("");
    let out = f.path("sweep");
    assert_eq!(f.cmd(&["--out", &out, "sweep", "alpha", "--data", &f.data]), 0);
    let text = fs::read_to_string(format!("{out}/sweep_alpha.csv")).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert_eq!(&row[3], "ok");
        let metrics: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(format!("{out}/alpha_{}/metrics.json", &row[0])).unwrap()).unwrap();
        assert_eq!(metrics["compat_auc"].to_string(), row[1]);
        assert_eq!(metrics["fitb_accuracy"].to_string(), row[2]);
        assert_eq!(metrics["config_hash"].as_str().unwrap(), &row[4]);
    }
    for metric in ["compat_auc", "fitb_accuracy"] {
        assert!(Path::new(&format!("{out}/sweep_alpha_{metric}.png")).exists());
    }

    let out = f.path("batch");
    assert_eq!(f.cmd(&["--out", &out, "sweep", "unlabeled-batch", "--data", &f.data, "--grid", "4,16,64"]), 0);
    let text = fs::read_to_string(format!("{out}/sweep_unlabeled_batch.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert_eq!(f.cmd(&["--out", &out, "sweep", "alpha", "--data", &f.data, "--grid", "0,0.5"]), 1);
}

#[test]
fn embed_export_writes_one_row_per_item() {
    let f = Fixture::new("");
    let train = f.path("train");
    assert_eq!(f.cmd(&["--out", &train, "train", "--data", &f.data]), 0);
    let out = f.path("export");
    let ckpt = format!("{train}/best.ckpt");
    assert_eq!(f.cmd(&["--out", &out, "embed-export", "--data", &f.data, "--checkpoint", &ckpt]), 0);
    let text = fs::read_to_string(format!("{out}/embeddings.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash = "));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3 + 8);
    let catalog = load_polyvore_layout(Path::new(&f.data)).unwrap();
    assert_eq!(lines.count(), catalog.items().len());
}
