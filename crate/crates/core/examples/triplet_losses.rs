//! The three loss terms on hand-made embeddings, and how the combined
//! objective weighs them.
//!
//! ```bash
//! cargo run --example triplet_losses
//! ```

use outfit_compat::encoder::EmbeddingMatrix;
use outfit_compat::losses::{combined_objective, consistency_loss, triplet_margin_loss, triplet_margin_loss_grad, LossConfig};

fn m(rows: &[[f64; 2]]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(rows).expect("equal-length rows")
}

fn main() -> outfit_compat::Result<()> {
    let cfg = LossConfig::default();

    // Row 0 is already separated by more than the margin, row 1 is not.
    let anchors = m(&[[0.0, 0.0], [0.0, 0.0]]);
    let positives = m(&[[0.1, 0.0], [0.5, 0.0]]);
    let negatives = m(&[[1.0, 0.0], [0.0, 0.6]]);
    let labeled = triplet_margin_loss(&anchors, &positives, &negatives, cfg.margin)?;
    let (_, grad) = triplet_margin_loss_grad(&anchors, &positives, &negatives, cfg.margin)?;
    println!("labeled loss {labeled:.4} (row 1 hinge {:.2}, row 0 inactive)", 0.5 - 0.6 + cfg.margin);
    println!("d/d anchor row 0 {:?}, row 1 {:?}", grad.anchor.row(0), grad.anchor.row(1));

    // Original view as anchor, shape view as positive, appearance view as negative.
    let original = m(&[[0.3, 0.3]]);
    let shape_view = m(&[[0.32, 0.29]]);
    let appearance_view = m(&[[0.5, 0.2]]);
    let consistency = consistency_loss(&original, &shape_view, &appearance_view, cfg.margin)?;
    println!("consistency loss {consistency:.4}");

    let pseudo = 0.25;
    let total = combined_objective(labeled, consistency, pseudo, &cfg)?;
    println!(
        "total = {labeled:.4} + {} * {consistency:.4} + {} * {pseudo} = {total:.4}",
        cfg.lambda_ss, cfg.lambda_pseudo
    );
    let supervised = combined_objective(labeled, consistency, pseudo, &cfg.labeled_only())?;
    println!("labeled-only objective {supervised:.4}");
    Ok(())
}
