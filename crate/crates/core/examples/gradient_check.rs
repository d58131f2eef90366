//! Compares the analytic gradient of the full objective with central finite
//! differences on a tiny encoder. Mined pseudo-triplets are held fixed so
//! the objective is piecewise smooth in the parameters. Inputs are random
//! pixels: flat backgrounds put many ReLU pre-activations on the same kink.
//! A coordinate whose finite differences at two step sizes disagree sits on
//! a kink and is marked instead of scored.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use outfit_compat::dataset::Image;
use outfit_compat::encoder::{init_encoder, EncoderConfig};
use outfit_compat::losses::LossConfig;
use outfit_compat::rng_from_seed;
use outfit_compat::training::{objective_gradient, Batch, TermWeights};
use outfit_compat::transforms::{appearance_transform, shape_transform, AppearanceTransformParams, ShapeTransformParams};
use rand::Rng as _;

const STEP: f64 = 1e-3;

fn main() -> outfit_compat::Result<()> {
    let mut rng = rng_from_seed(11);
    let images = (0..20)
        .map(|_| Image::new(16, 16, (0..16 * 16 * 3).map(|_| rng.random()).collect()))
        .collect::<outfit_compat::Result<Vec<_>>>()?;
    let unlabeled: Vec<_> = images[12..20].iter().collect();
    let batch = Batch {
        anchors: images[0..4].iter().collect(),
        positives: images[4..8].iter().collect(),
        negatives: images[8..12].iter().collect(),
        shape_views: unlabeled.iter().map(|im| shape_transform(im, &ShapeTransformParams::default(), &mut rng)).collect(),
        appearance_views: unlabeled
            .iter()
            .map(|im| appearance_transform(im, &AppearanceTransformParams::default(), &mut rng))
            .collect(),
        unlabeled,
    };

    let mut state = init_encoder(&EncoderConfig::tiny(8, 16, 2))?;
    let loss = LossConfig::default();
    let weights = TermWeights::from(&loss);
    let (parts, grad) = objective_gradient(&state, &batch, loss.margin, weights, None)?;
    println!(
        "L_l {:.4}  L_ss {:.4}  L_pseudo {:.4}  total {:.4}  ({} pseudo-triplets, {} dropped)",
        parts.labeled,
        parts.consistency,
        parts.pseudo,
        parts.total,
        parts.triplets.len(),
        parts.dropped
    );

    let mined = parts.triplets.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..16 {
        let k = rng.random_range(0..state.params().len());
        let orig = state.params()[k];
        let mut value_at = |x: f64| -> outfit_compat::Result<f64> {
            state.params_mut()[k] = x;
            Ok(objective_gradient(&state, &batch, loss.margin, weights, Some(&mined))?.0.total)
        };
        let numeric = (value_at(orig + STEP)? - value_at(orig - STEP)?) / (2.0 * STEP);
        let fine = (value_at(orig + STEP / 10.0)? - value_at(orig - STEP / 10.0)?) / (0.2 * STEP);
        state.params_mut()[k] = orig;
        let relative = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        if relative(numeric, fine) > 1e-4 {
            println!("param {k:5}: on a kink (numeric {numeric:+.6e} vs {fine:+.6e} at step/10)");
            continue;
        }
        let rel = relative(numeric, grad[k]);
        worst = worst.max(rel);
        println!("param {k:5}: analytic {:+.6e}  numeric {numeric:+.6e}  rel {rel:.1e}", grad[k]);
    }
    println!("worst relative error {worst:.1e}");
    Ok(())
}
