//! Imbalanced binary classification metrics.

use crate::error::{Error, Result};

/// Default decision threshold on the sigmoid output.
pub const F1_THRESHOLD: f64 = 0.5;

fn check(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::config(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::config("scores must be finite"));
    }
    Ok(())
}

/// Area under the precision-recall curve by the average-precision step
/// rule: `Σ (R_t − R_{t−1}) · P_t` over distinct score thresholds, highest
/// first. Tied scores enter as one group.
pub fn auprc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y >= 0.5).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::config("AUPRC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] >= 0.5 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at(scores: &[f64], labels: &[f64], threshold: f64) -> Result<Self> {
        check(scores, labels)?;
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y >= 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn precision(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// `2PR / (P + R)`, or 0 when there are no true positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            if self.tp + self.fp == 0 && self.tp + self.fn_ == 0 {
                log::info!("F1 undefined without predicted or actual positives; using 0");
            }
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }
}

/// F1 of the predictions `score >= threshold`.
pub fn f1_score(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    Ok(Confusion::at(scores, labels, threshold)?.f1())
}
