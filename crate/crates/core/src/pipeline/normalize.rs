use log::warn;

use super::{extract_window, variable_name, PatientRecord, WindowedSample, VARIABLE_COUNT};
use crate::error::{Error, Result};
use crate::model::{LAB_COUNT, VITAL_COUNT};

/// Mean of every in-window observation of each variable across `records`.
///
/// Variables never observed in any record fall back to 0.
pub fn fit_population_means(records: &[&PatientRecord], window: usize) -> Result<Vec<f64>> {
    let mut sums = [0.0; VARIABLE_COUNT];
    let mut counts = [0usize; VARIABLE_COUNT];
    for r in records {
        let raw = extract_window(r, window)?;
        for (v, s) in raw.series.iter().enumerate() {
            for o in s {
                sums[v] += o.value;
                counts[v] += 1;
            }
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(v, (&s, &n))| {
            if n == 0 {
                warn!("variable {} never observed in training data; imputing 0", variable_name(v));
                0.0
            } else {
                s / n as f64
            }
        })
        .collect())
}

/// Training-data statistics: imputation means plus per-variable z-score
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub window: usize,
    /// Number of training samples the statistics were fitted on.
    pub samples: usize,
    pub population_mean: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation; zero marks a constant column.
    pub std: Vec<f64>,
}

/// Fits z-score parameters on training samples built with `population_mean`.
pub fn fit_normalization(samples: &[WindowedSample], population_mean: Vec<f64>) -> Result<NormalizationStats> {
    let Some(first) = samples.first() else {
        return Err(Error::config("cannot fit normalization on zero samples"));
    };
    let window = first.window;
    let mut sums = [0.0; VARIABLE_COUNT];
    let mut counts = [0usize; VARIABLE_COUNT];
    for_each_cell(samples, |v, x| {
        sums[v] += x;
        counts[v] += 1;
    });
    let mean: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
    let mut sq = [0.0; VARIABLE_COUNT];
    for_each_cell(samples, |v, x| {
        let d = x - mean[v];
        sq[v] += d * d;
    });
    let std: Vec<f64> = sq.iter().zip(&counts).map(|(s, &n)| (s / n as f64).sqrt()).collect();
    for (v, s) in std.iter().enumerate() {
        if *s == 0.0 {
            warn!("variable {} is constant in training data; normalized to 0", variable_name(v));
        }
    }
    Ok(NormalizationStats { window, samples: samples.len(), population_mean, mean, std })
}

fn for_each_cell(samples: &[WindowedSample], mut f: impl FnMut(usize, f64)) {
    for s in samples {
        for row in s.vitals.chunks_exact(VITAL_COUNT) {
            for (j, &x) in row.iter().enumerate() {
                f(j, x);
            }
        }
        for row in s.labs.chunks_exact(LAB_COUNT) {
            for (j, &x) in row.iter().enumerate() {
                f(VITAL_COUNT + j, x);
            }
        }
    }
}

impl NormalizationStats {
    /// Population means, then z-score parameters, from training records.
    /// Returns the stats and the (unnormalized) training samples.
    pub fn fit(records: &[&PatientRecord], window: usize) -> Result<(Self, Vec<WindowedSample>)> {
        let means = fit_population_means(records, window)?;
        let samples = records.iter().map(|r| super::build_sample(r, window, &means)).collect::<Result<Vec<_>>>()?;
        let stats = fit_normalization(&samples, means)?;
        Ok((stats, samples))
    }

    fn z(&self, v: usize, x: f64) -> f64 {
        if self.std[v] == 0.0 {
            0.0
        } else {
            (x - self.mean[v]) / self.std[v]
        }
    }

    pub fn apply(&self, sample: &WindowedSample) -> WindowedSample {
        let mut out = sample.clone();
        for row in out.vitals.chunks_exact_mut(VITAL_COUNT) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.z(j, *x);
            }
        }
        for row in out.labs.chunks_exact_mut(LAB_COUNT) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.z(VITAL_COUNT + j, *x);
            }
        }
        out
    }

    pub fn apply_all(&self, samples: &[WindowedSample]) -> Vec<WindowedSample> {
        samples.iter().map(|s| self.apply(s)).collect()
    }

    /// Builds and normalizes samples for records outside the training set.
    pub fn transform(&self, records: &[&PatientRecord]) -> Result<Vec<WindowedSample>> {
        records.iter().map(|r| Ok(self.apply(&super::build_sample(r, self.window, &self.population_mean)?))).collect()
    }

    /// Sample-count-weighted pooling of per-party statistics: pooled means,
    /// and the standard deviation of the union implied by each party's
    /// mean and variance.
    pub fn pooled(parts: &[NormalizationStats]) -> Result<NormalizationStats> {
        let Some(first) = parts.first() else {
            return Err(Error::config("cannot pool zero statistics"));
        };
        if parts.iter().any(|p| p.window != first.window) {
            return Err(Error::config("cannot pool statistics of different windows"));
        }
        let total: usize = parts.iter().map(|p| p.samples).sum();
        let n = total as f64;
        let weighted = |f: &dyn Fn(&NormalizationStats, usize) -> f64, v: usize| {
            parts.iter().map(|p| p.samples as f64 * f(p, v)).sum::<f64>() / n
        };
        let mut population_mean = vec![0.0; VARIABLE_COUNT];
        let mut mean = vec![0.0; VARIABLE_COUNT];
        let mut std = vec![0.0; VARIABLE_COUNT];
        for v in 0..VARIABLE_COUNT {
            population_mean[v] = weighted(&|p, v| p.population_mean[v], v);
            mean[v] = weighted(&|p, v| p.mean[v], v);
            let second = weighted(&|p, v| p.std[v] * p.std[v] + p.mean[v] * p.mean[v], v);
            std[v] = (second - mean[v] * mean[v]).max(0.0).sqrt();
        }
        Ok(NormalizationStats { window: first.window, samples: total, population_mean, mean, std })
    }
}
