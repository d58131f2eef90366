//! Generates a small synthetic corpus, writes it in the dataset layout and
//! prints a summary.
//!
//! ```bash
//! cargo run --release --example generate_corpus -- /tmp/outfits
//! ```

use std::path::PathBuf;

use outfit_compat::dataset::{load_polyvore_layout, split_catalog};
use outfit_compat::synthcorpus::{generate_corpus, write_corpus, SynthSpec};

fn main() -> outfit_compat::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("outfit-compat-corpus"));
    let spec = SynthSpec {
        n_outfits: 200,
        seed: 7,
        ..Default::default()
    };
    let (catalog, truth) = generate_corpus(&spec)?;
    let split = split_catalog(&catalog, 0.05, spec.seed)?;
    write_corpus(&out, &catalog, &truth, Some(&split))?;

    let reloaded = load_polyvore_layout(&out)?;
    println!(
        "{} outfits, {} items, {} categories -> {}",
        reloaded.outfits().len(),
        reloaded.items().len(),
        reloaded.categories().len(),
        out.display()
    );
    for theme in spec.themes() {
        println!(
            "theme hue {:6.1} deg +/- {:.1}",
            theme.hue_center, theme.hue_tolerance
        );
    }
    println!(
        "split: {} labeled outfits, {} unlabeled items, {} validation, {} test",
        split.labeled_outfit_ids.len(),
        split.unlabeled_item_ids.len(),
        split.validation_outfit_ids.len(),
        split.test_outfit_ids.len()
    );
    Ok(())
}
