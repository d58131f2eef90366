//! Triplet margin loss and the combined three-term objective.

use serde::{Deserialize, Serialize};

use crate::encoder::{euclidean, EmbeddingMatrix};
use crate::{Error, Result};

/// Margin and loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub lambda_ss: f64,
    pub lambda_pseudo: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.4,
            lambda_ss: 0.1,
            lambda_pseudo: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Parameter(format!("margin must be > 0, got {}", self.margin)));
        }
        for (name, v) in [("lambda_ss", self.lambda_ss), ("lambda_pseudo", self.lambda_pseudo)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Supervised-only objective (both unlabeled terms switched off).
    pub fn labeled_only(self) -> Self {
        Self {
            lambda_ss: 0.0,
            lambda_pseudo: 0.0,
            ..self
        }
    }
}

/// Gradients of a triplet loss with respect to each of its three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub anchor: EmbeddingMatrix,
    pub positive: EmbeddingMatrix,
    pub negative: EmbeddingMatrix,
}

fn check_aligned(a: &EmbeddingMatrix, p: &EmbeddingMatrix, n: &EmbeddingMatrix) -> Result<()> {
    if a.rows() != p.rows() || a.rows() != n.rows() {
        return Err(Error::Shape(format!(
            "triplet row counts differ: {}, {}, {}",
            a.rows(),
            p.rows(),
            n.rows()
        )));
    }
    if a.cols() != p.cols() || a.cols() != n.cols() {
        return Err(Error::Shape(format!(
            "triplet dimensions differ: {}, {}, {}",
            a.cols(),
            p.cols(),
            n.cols()
        )));
    }
    Ok(())
}

/// Mean over rows of `max(0, |a - p| - |a - n| + margin)`. An empty batch
/// has loss 0.
pub fn triplet_margin_loss(
    anchor: &EmbeddingMatrix,
    positive: &EmbeddingMatrix,
    negative: &EmbeddingMatrix,
    margin: f64,
) -> Result<f64> {
    check_aligned(anchor, positive, negative)?;
    if anchor.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..anchor.rows())
        .map(|i| {
            let d_ap = euclidean(anchor.row(i), positive.row(i));
            let d_an = euclidean(anchor.row(i), negative.row(i));
            (d_ap - d_an + margin).max(0.0)
        })
        .sum();
    Ok(total / anchor.rows() as f64)
}

/// Loss value and its gradient. Rows inside the hinge's flat region (and the
/// undefined direction of a zero-length difference) contribute zero.
pub fn triplet_margin_loss_grad(
    anchor: &EmbeddingMatrix,
    positive: &EmbeddingMatrix,
    negative: &EmbeddingMatrix,
    margin: f64,
) -> Result<(f64, TripletGrad)> {
    check_aligned(anchor, positive, negative)?;
    let (rows, cols) = (anchor.rows(), anchor.cols());
    let mut grad = TripletGrad {
        anchor: EmbeddingMatrix::zeros(rows, cols),
        positive: EmbeddingMatrix::zeros(rows, cols),
        negative: EmbeddingMatrix::zeros(rows, cols),
    };
    if rows == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    for i in 0..rows {
        let (a, p, n) = (anchor.row(i), positive.row(i), negative.row(i));
        let d_ap = euclidean(a, p);
        let d_an = euclidean(a, n);
        let hinge = d_ap - d_an + margin;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        let w_ap = if d_ap > 0.0 { scale / d_ap } else { 0.0 };
        let w_an = if d_an > 0.0 { scale / d_an } else { 0.0 };
        let (ga, gp, gn) = (
            grad.anchor.row_mut(i),
            grad.positive.row_mut(i),
            grad.negative.row_mut(i),
        );
        for k in 0..cols {
            let u = (a[k] - p[k]) * w_ap;
            let v = (a[k] - n[k]) * w_an;
            ga[k] = u - v;
            gp[k] = -u;
            gn[k] = v;
        }
    }
    Ok((total * scale, grad))
}

/// Self-supervised term: anchor = original view, positive = shape-perturbed
/// view, negative = appearance-perturbed view.
pub fn consistency_loss(
    original: &EmbeddingMatrix,
    shape_view: &EmbeddingMatrix,
    appearance_view: &EmbeddingMatrix,
    margin: f64,
) -> Result<f64> {
    triplet_margin_loss(original, shape_view, appearance_view, margin)
}

/// `L_l + lambda_ss * L_ss + lambda_pseudo * L_pseudo`.
pub fn combined_objective(labeled: f64, consistency: f64, pseudo: f64, cfg: &LossConfig) -> Result<f64> {
    if !(labeled.is_finite() && consistency.is_finite() && pseudo.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss component: labeled={labeled}, consistency={consistency}, pseudo={pseudo}"
        )));
    }
    Ok(labeled + cfg.lambda_ss * consistency + cfg.lambda_pseudo * pseudo)
}
