//! Mirrors labeled triplets into an unlabeled batch by nearest-neighbour
//! search, dropping candidates where two roles land on the same item.
//!
//! ```bash
//! cargo run --example pseudo_triplet_mining
//! ```

use outfit_compat::encoder::EmbeddingMatrix;
use outfit_compat::mining::{assemble_pseudo_triplets, nearest_indices};

fn main() -> outfit_compat::Result<()> {
    let anchors = EmbeddingMatrix::from_rows(&[[0.0, 0.0], [5.0, 5.0]])?;
    let positives = EmbeddingMatrix::from_rows(&[[0.2, 0.1], [5.1, 5.2]])?;
    let negatives = EmbeddingMatrix::from_rows(&[[3.0, 0.0], [5.2, 5.1]])?;
    let unlabeled = EmbeddingMatrix::from_rows(&[
        [0.05, 0.0],
        [0.3, 0.2],
        [2.9, 0.1],
        [5.1, 5.1],
        [9.0, 9.0],
    ])?;

    println!("nearest to anchors:   {:?}", nearest_indices(&anchors, &unlabeled)?);
    println!("nearest to positives: {:?}", nearest_indices(&positives, &unlabeled)?);
    println!("nearest to negatives: {:?}", nearest_indices(&negatives, &unlabeled)?);

    let (kept, dropped) = assemble_pseudo_triplets(&anchors, &positives, &negatives, &unlabeled)?;
    for t in &kept {
        println!("pseudo-triplet ({}, {}, {})", t.idx_a, t.idx_p, t.idx_n);
    }
    // The second triplet is tightly clustered: all three roles map to row 3.
    println!("dropped {dropped}");
    Ok(())
}
