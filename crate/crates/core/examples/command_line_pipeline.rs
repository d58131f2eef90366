//! The command-line workflow driven in-process: generate data, train,
//! evaluate, export embeddings, and sweep the label fraction. Artifacts go
//! to a directory given as the first argument.
//!
//! ```bash
//! cargo run --release --example command_line_pipeline -- /tmp/oc-run
//! ```

use std::path::PathBuf;

use outfit_compat::cli::run;

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("outfit-compat-pipeline"));
    let config = root.join("experiment.toml");
    std::fs::create_dir_all(&root).expect("create output root");
    std::fs::write(
        &config,
        "# small and quick\noutfits = 400\nimage_size = 32\nepochs = 3\niterations_per_epoch = 10\n",
    )
    .expect("write config");
    let p = |name: &str| root.join(name).display().to_string();
    let cfg = config.display().to_string();
    let data = p("data");

    let steps: Vec<Vec<String>> = vec![
        vec!["gen-data".into(), "--out".into(), data.clone()],
        vec!["train".into(), "--data".into(), data.clone(), "--out".into(), p("train")],
        vec![
            "eval".into(),
            "--data".into(),
            data.clone(),
            "--checkpoint".into(),
            p("train/best.ckpt"),
            "--out".into(),
            p("eval"),
        ],
        vec!["eval".into(), "--data".into(), data.clone(), "--baseline".into(), "color-hist".into(), "--out".into(), p("baseline")],
        vec![
            "embed-export".into(),
            "--data".into(),
            data.clone(),
            "--checkpoint".into(),
            p("train/best.ckpt"),
            "--test-only".into(),
            "--out".into(),
            p("export"),
        ],
        vec!["sweep".into(), "alpha".into(), "--data".into(), data, "--grid".into(), "0.05,0.5".into(), "--out".into(), p("sweep")],
    ];
    for step in steps {
        let mut args = vec!["outfit-compat".to_string(), "--seed".into(), "3".into(), "--config".into(), cfg.clone()];
        args.extend(step);
        let code = run(&args);
        println!("{} -> exit {code}", args[5..].join(" "));
        if code != 0 {
            std::process::exit(code);
        }
    }
    for f in ["eval/metrics.json", "baseline/metrics.json", "sweep/sweep_alpha.csv"] {
        println!("--- {f}\n{}", std::fs::read_to_string(root.join(f)).expect("artifact exists"));
    }
}
