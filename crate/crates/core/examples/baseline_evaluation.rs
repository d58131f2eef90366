//! FITB accuracy and compatibility AUC for two reference embedders: a
//! random-init encoder and the colour-histogram baseline. The untrained
//! encoder lands above chance: the corpus rule is about colour, and random
//! conv filters already respond to it.
//!
//! ```bash
//! cargo run --release --example baseline_evaluation
//! ```

use outfit_compat::dataset::split_catalog;
use outfit_compat::encoder::{init_encoder, EncoderConfig, DEFAULT_BINS};
use outfit_compat::evaluation::{Embedder, EvalSet};
use outfit_compat::synthcorpus::{generate_corpus, SynthSpec};

fn main() -> outfit_compat::Result<()> {
    let spec = SynthSpec {
        image_size: 32,
        seed: 5,
        ..Default::default()
    };
    let (catalog, truth) = generate_corpus(&spec)?;
    let split = split_catalog(&catalog, 0.05, 0)?;
    let test = EvalSet::generate(&catalog, &split.resolve(&catalog)?.test_outfits, Some(&truth), 0)?;
    println!("{} questions, {} compatibility examples", test.questions.len(), test.examples.len());

    let random = init_encoder(&EncoderConfig::tiny(32, 32, 0))?;
    for (name, embedder) in [
        ("random-init encoder", Embedder::Encoder(&random)),
        ("colour histogram", Embedder::ColorHistogram { bins_per_channel: DEFAULT_BINS }),
    ] {
        let (fitb, auc) = test.evaluate(embedder, &catalog)?;
        println!("{name:20} FITB {:.3}  AUC {auc:.3}", fitb.unwrap_or(f64::NAN));
    }
    Ok(())
}
