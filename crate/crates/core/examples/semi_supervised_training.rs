//! Trains the same encoder twice on a synthetic corpus with 5% of the train
//! outfits labeled: once with the labeled triplet loss only, once with the
//! consistency and pseudo-triplet terms added. Both runs share every seed.
//!
//! ```bash
//! cargo run --release --example semi_supervised_training
//! ```

use std::time::Instant;

use outfit_compat::dataset::split_catalog;
use outfit_compat::encoder::EncoderConfig;
use outfit_compat::evaluation::{Embedder, EvalSet};
use outfit_compat::losses::LossConfig;
use outfit_compat::synthcorpus::{generate_corpus, SynthSpec};
use outfit_compat::training::{train_with_truth, TrainConfig};

fn main() -> outfit_compat::Result<()> {
    let spec = SynthSpec {
        image_size: 32,
        seed: 1,
        ..SynthSpec::hard()
    };
    let (catalog, truth) = generate_corpus(&spec)?;
    let split = split_catalog(&catalog, 0.05, 1)?;
    let resolved = split.resolve(&catalog)?;
    let test = EvalSet::generate(&catalog, &resolved.test_outfits, Some(&truth), 7)?;
    println!(
        "{} labeled outfits, {} unlabeled items, {} test questions",
        split.labeled_outfit_ids.len(),
        split.unlabeled_item_ids.len(),
        test.questions.len()
    );

    let encoder = EncoderConfig::tiny(32, spec.image_size, 0);
    for (name, loss) in [
        ("labeled only", LossConfig::default().labeled_only()),
        ("full objective", LossConfig::default()),
    ] {
        let cfg = TrainConfig {
            loss,
            ..TrainConfig::desk_scale()
        };
        let t = Instant::now();
        let outcome = train_with_truth(&catalog, &split, &encoder, &cfg, Some(&truth))?;
        let (fitb, auc) = test.evaluate(Embedder::Encoder(&outcome.best), &catalog)?;
        let last = outcome.log.iterations.last().expect("at least one iteration");
        println!(
            "{name:15} test AUC {auc:.3}  FITB {:.3}  best epoch {:?}  final L_l {:.3} L_ss {:.3} L_pseudo {:.3}  ({:.1?})",
            fitb.unwrap_or(f64::NAN),
            outcome.log.best_epoch,
            last.labeled,
            last.consistency,
            last.pseudo,
            t.elapsed()
        );
    }
    Ok(())
}
