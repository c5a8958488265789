use super::Mode;
use crate::error::{Error, Result};

/// Weight of the previous running statistic in the moving-average update.
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const BATCH_NORM_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Cache {
    mode: Mode,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    running: Option<(Vec<f64>, Vec<f64>)>,
}

impl Cache {
    pub(super) fn running_update(&self) -> Option<(&[f64], &[f64])> {
        self.running.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    batch: usize,
    features: usize,
    mode: Mode,
) -> (Vec<f64>, Cache) {
    let (mean, var) = match mode {
        Mode::Train => batch_moments(x, batch, features),
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPSILON).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for (i, (row, out)) in x.chunks_exact(features).zip(y.chunks_exact_mut(features)).enumerate() {
        for j in 0..features {
            let n = (row[j] - mean[j]) * inv_std[j];
            normalized[i * features + j] = n;
            out[j] = gamma[j] * n + beta[j];
        }
    }
    let running = (mode == Mode::Train).then(|| {
        let m = BATCH_NORM_MOMENTUM;
        let new_mean = running_mean.iter().zip(&mean).map(|(r, b)| m * r + (1.0 - m) * b).collect();
        let new_var = running_var.iter().zip(&var).map(|(r, b)| m * r + (1.0 - m) * b).collect();
        (new_mean, new_var)
    });
    (y, Cache { mode, normalized, inv_std, running })
}

/// Per-feature mean and biased variance over the batch.
fn batch_moments(x: &[f64], batch: usize, features: usize) -> (Vec<f64>, Vec<f64>) {
    let n = batch as f64;
    let mut mean = vec![0.0; features];
    for row in x.chunks_exact(features) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; features];
    for row in x.chunks_exact(features) {
        for j in 0..features {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

pub(super) fn backward(
    cache: &Cache,
    gamma: &[f64],
    dy: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
    batch: usize,
    features: usize,
) -> Result<Vec<f64>> {
    if cache.mode != Mode::Train {
        return Err(Error::contract("batch-norm backward needs a train-mode cache"));
    }
    let n = batch as f64;
    let mut sum_dy = vec![0.0; features];
    let mut sum_dy_xhat = vec![0.0; features];
    for (g, xh) in dy.chunks_exact(features).zip(cache.normalized.chunks_exact(features)) {
        for j in 0..features {
            sum_dy[j] += g[j];
            sum_dy_xhat[j] += g[j] * xh[j];
        }
    }
    for j in 0..features {
        d_gamma[j] += sum_dy_xhat[j];
        d_beta[j] += sum_dy[j];
    }
    let mut dx = vec![0.0; dy.len()];
    for ((out, g), xh) in
        dx.chunks_exact_mut(features).zip(dy.chunks_exact(features)).zip(cache.normalized.chunks_exact(features))
    {
        for j in 0..features {
            let scale = gamma[j] * cache.inv_std[j] / n;
            out[j] = scale * (n * g[j] - sum_dy[j] - xh[j] * sum_dy_xhat[j]);
        }
    }
    Ok(dx)
}
