//! Stratified partitioning: k-fold assignment, train/validation splits and
//! the per-fold split plan shared by the CML, LML and FL arms.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::cohort::{partition_indices, ClientCohort};
use crate::error::{Error, Result};
use crate::seed;

/// Fraction of each training pool held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.15;

/// Splits `indices` into per-class shuffled lists (positives first).
fn by_class(indices: &[usize], labels: &[u8], rng: &mut impl rand::Rng) -> [Vec<usize>; 2] {
    let mut pos: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] != 1).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    [pos, neg]
}

/// Deals each class round-robin over `k` parts. Negatives continue where the
/// positives stopped so part sizes differ by at most one.
pub(crate) fn deal_stratified(indices: &[usize], labels: &[u8], k: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let [pos, neg] = by_class(indices, labels, rng);
    let mut parts = vec![Vec::new(); k];
    for (j, &i) in pos.iter().enumerate() {
        parts[j % k].push(i);
    }
    let offset = pos.len() % k;
    for (j, &i) in neg.iter().enumerate() {
        parts[(j + offset) % k].push(i);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

/// Assigns every sample to one of `k` folds, stratified by label.
/// Returns the fold index of each sample.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos < k || neg < k {
        return Err(Error::config(format!(
            "{k}-fold stratification needs at least {k} samples per class (have {pos} positive, {neg} negative)"
        )));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let parts = deal_stratified(&all, labels, k, &mut seed::rng(seed, &[0xF01D]));
    let mut folds = vec![0; labels.len()];
    for (f, part) in parts.iter().enumerate() {
        for &i in part {
            folds[i] = f;
        }
    }
    Ok(folds)
}

/// Stratified hold-out: `round(fraction · n_c)` samples of each class go to
/// the second part. Both parts are returned sorted.
pub fn stratified_split(indices: &[usize], labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let classes = by_class(indices, labels, &mut seed::rng(seed, &[0x5B17]));
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for class in classes {
        let n_held = (fraction * class.len() as f64).round() as usize;
        held.extend_from_slice(&class[..n_held]);
        keep.extend_from_slice(&class[n_held..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    (keep, held)
}

/// Data assignment for one cross-validation fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub fold: usize,
    /// Shared by every approach.
    pub test: Vec<usize>,
    pub cml_train: Vec<usize>,
    pub cml_validation: Vec<usize>,
    /// Client cohorts per client count; LML and FL use the same shards.
    pub clients: BTreeMap<usize, Vec<ClientCohort>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Approach {
    Cml,
    Lml(usize),
    Fl(usize),
}

impl Approach {
    pub fn label(self) -> String {
        match self {
            Approach::Cml => "CML".to_string(),
            Approach::Lml(k) => format!("LML{k}"),
            Approach::Fl(k) => format!("FL{k}"),
        }
    }

    pub fn clients(self) -> usize {
        match self {
            Approach::Cml => 1,
            Approach::Lml(k) | Approach::Fl(k) => k,
        }
    }
}

/// Every split of the evaluation protocol, fixed by labels, fold count,
/// client counts, skew and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub seed: u64,
    pub folds: usize,
    /// Fold index of each sample.
    pub assignment: Vec<usize>,
    pub splits: Vec<FoldSplit>,
}

impl SplitPlan {
    pub fn build(labels: &[u8], folds: usize, client_counts: &[usize], skew: f64, seed: u64) -> Result<Self> {
        let assignment = stratified_kfold(labels, folds, seed)?;
        let mut splits = Vec::with_capacity(folds);
        for f in 0..folds {
            let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
            let pool: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != f).collect();
            let (cml_train, cml_validation) =
                stratified_split(&pool, labels, VALIDATION_FRACTION, seed::derive(seed, &[f as u64, 0]));
            let mut clients = BTreeMap::new();
            for &k in client_counts {
                let shards = partition_indices(&pool, labels, k, skew, seed::derive(seed, &[f as u64, k as u64]))?;
                clients.insert(k, shards);
            }
            splits.push(FoldSplit { fold: f, test, cml_train, cml_validation, clients });
        }
        Ok(Self { seed, folds, assignment, splits })
    }

    /// Test indices used by `approach` in `fold`.
    pub fn test_set(&self, fold: usize, _approach: Approach) -> &[usize] {
        &self.splits[fold].test
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, pos: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i < pos)).collect()
    }

    #[test]
    fn exact_division() {
        let y = labels(100, 10);
        let folds = stratified_kfold(&y, 5, 3).unwrap();
        for f in 0..5 {
            let members: Vec<usize> = (0..100).filter(|&i| folds[i] == f).collect();
            assert_eq!(members.len(), 20);
            assert_eq!(members.iter().filter(|&&i| y[i] == 1).count(), 2);
        }
    }

    #[test]
    fn published_cohort_fold_counts() {
        let y = labels(19414, 1892);
        let folds = stratified_kfold(&y, 5, 1).unwrap();
        let mut sizes = [0usize; 5];
        let mut pos = [0usize; 5];
        for (i, &f) in folds.iter().enumerate() {
            sizes[f] += 1;
            pos[f] += y[i] as usize;
        }
        assert!(pos.iter().all(|&p| p == 378 || p == 379), "{pos:?}");
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    }

    #[test]
    fn small_class_is_rejected() {
        assert!(stratified_kfold(&labels(50, 4), 5, 0).is_err());
        assert!(stratified_kfold(&labels(50, 10), 1, 0).is_err());
    }

    #[test]
    fn split_preserves_class_ratio() {
        let y = labels(1000, 97);
        let idx: Vec<usize> = (0..1000).collect();
        let (train, val) = stratified_split(&idx, &y, 0.15, 9);
        assert_eq!(train.len() + val.len(), 1000);
        let frac = |s: &[usize]| s.iter().filter(|&&i| y[i] == 1).count() as f64 / s.len() as f64;
        assert!((frac(&val) - 0.097).abs() < 0.005);
        assert!((frac(&train) - 0.097).abs() < 0.005);
        let mut all = [train, val].concat();
        all.sort_unstable();
        assert_eq!(all, idx);
    }

    #[test]
    fn plan_is_deterministic() {
        let y = labels(300, 40);
        let a = SplitPlan::build(&y, 5, &[2, 4], 0.0, 5).unwrap();
        let b = SplitPlan::build(&y, 5, &[2, 4], 0.0, 5).unwrap();
        assert_eq!(a, b);
        let c = SplitPlan::build(&y, 5, &[2, 4], 0.0, 6).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }
}
