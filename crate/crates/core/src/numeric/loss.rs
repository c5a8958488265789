use crate::error::{Error, Result};

/// Predictions are clamped to this distance from 0 and 1 before taking logs.
pub const PROBABILITY_CLAMP: f64 = 1e-7;

/// Per-class loss multipliers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights { positive: 1.0, negative: 1.0 };

    pub fn for_label(&self, label: f64) -> f64 {
        if label >= 0.5 {
            self.positive
        } else {
            self.negative
        }
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::UNIFORM
    }
}

/// Mean class-weighted binary cross-entropy and its gradient with respect to
/// each prediction.
pub fn weighted_bce_loss(predictions: &[f64], labels: &[f64], weights: ClassWeights) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::config(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if weights.positive <= 0.0 || weights.negative <= 0.0 {
        return Err(Error::config("class weights must be positive"));
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.iter().zip(labels) {
        let w = weights.for_label(y);
        let clamped = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
        loss -= w * (y * clamped.ln() + (1.0 - y) * (1.0 - clamped).ln());
        // Zero gradient where the clamp is active.
        let g = if p == clamped { -w * (y / p - (1.0 - y) / (1.0 - p)) / n } else { 0.0 };
        grad.push(g);
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Numeric { layer: "loss".into(), detail: format!("loss is {loss}") });
    }
    Ok((loss, grad))
}

/// Per-sample weighted losses, used for evaluation sums over large sets.
pub fn weighted_bce_terms(predictions: &[f64], labels: &[f64], weights: ClassWeights) -> Vec<f64> {
    predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
            -weights.for_label(y) * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .collect()
}
