//! Server side of FedAvg. The coordinator sees clients only through
//! [`FederatedClient`]: parameter sets go out and come back, along with one
//! scalar validation loss per client and round.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::ParameterSet;

/// Clients' mini-batch size is `max(64 / K, 1)` unless overridden.
pub const BASE_BATCH_SIZE: usize = 64;

pub trait FederatedClient: Send + Sync {
    fn id(&self) -> usize;

    /// `n_k`, the number of local training samples.
    fn train_size(&self) -> usize;

    /// Trains a copy of `global` on local data and returns `w^k`.
    fn local_update(
        &mut self,
        global: &ParameterSet,
        batch_size: usize,
        learning_rate: f64,
        epochs: usize,
    ) -> Result<ParameterSet>;

    /// Weighted cross-entropy of `global` on the local validation shard.
    fn validation_loss(&self, global: &ParameterSet) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederationConfig {
    pub clients: usize,
    pub max_rounds: usize,
    pub local_epochs: usize,
    /// `None` applies the `64 / K` rule.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Optional `(factor, every)` decay indexed by round. Off by default.
    pub round_decay: Option<(f64, usize)>,
    pub patience: usize,
    pub seed: u64,
    /// Weight the stopping loss by `n_k` instead of a plain client mean.
    pub weighted_validation: bool,
    /// Run local passes concurrently. Results do not depend on this flag.
    pub parallel: bool,
    pub history_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 2,
            max_rounds: 100,
            local_epochs: 1,
            batch_size: None,
            learning_rate: 0.01,
            round_decay: None,
            patience: 30,
            seed: 0,
            weighted_validation: false,
            parallel: true,
            history_path: None,
            checkpoint_path: None,
        }
    }
}

impl FederationConfig {
    pub fn for_clients(clients: usize) -> Self {
        Self { clients, ..Self::default() }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or((BASE_BATCH_SIZE / self.clients.max(1)).max(1))
    }

    /// Learning rate for a 0-indexed round.
    pub fn learning_rate_at(&self, round: usize) -> f64 {
        match self.round_decay {
            Some((factor, every)) => self.learning_rate * factor.powi((round / every) as i32),
            None => self.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("federation needs at least one client"));
        }
        if self.max_rounds == 0 || self.local_epochs == 0 {
            return Err(Error::config("rounds and local epochs must be at least 1"));
        }
        if self.patience > self.max_rounds {
            return Err(Error::config(format!("patience {} exceeds max rounds {}", self.patience, self.max_rounds)));
        }
        if self.batch_size() == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if let Some((factor, every)) = self.round_decay {
            if !(factor > 0.0 && factor <= 1.0) || every == 0 {
                return Err(Error::config(format!("round decay ({factor}, {every}) is invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub learning_rate: f64,
    /// In ascending client id order.
    pub client_losses: Vec<f64>,
    pub average_loss: f64,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederationOutcome {
    pub params: ParameterSet,
    /// 1-based.
    pub best_round: usize,
    pub best_loss: f64,
    pub history: Vec<RoundRecord>,
    pub stopped_early: bool,
}

/// `w = Σ (n_k / n) w^k` over every entry, running statistics included.
///
/// Clients are summed in the given order. Each coordinate is clamped to the
/// range of its client values, which only removes rounding drift: the exact
/// weighted mean always lies in that range.
pub fn fedavg_aggregate(params: &[&ParameterSet], sizes: &[usize]) -> Result<ParameterSet> {
    let Some(first) = params.first() else {
        return Err(Error::contract("aggregation needs at least one client"));
    };
    if params.len() != sizes.len() {
        return Err(Error::contract(format!("{} parameter sets for {} sizes", params.len(), sizes.len())));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::contract("client sizes sum to zero"));
    }
    for p in &params[1..] {
        first.ensure_compatible(p)?;
    }
    let weights: Vec<f64> = sizes.iter().map(|&n| n as f64 / total as f64).collect();
    let mut out = (*first).clone();
    for e in 0..out.len() {
        let dst = out.value_mut(e).data_mut();
        for (j, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (p, &w) in params.iter().zip(&weights) {
                let x = p.value(e).data()[j];
                acc += w * x;
                lo = lo.min(x);
                hi = hi.max(x);
            }
            *d = acc.clamp(lo, hi);
        }
    }
    Ok(out)
}

fn local_updates<C: FederatedClient>(
    clients: &mut [C],
    global: &ParameterSet,
    config: &FederationConfig,
    lr: f64,
) -> Result<Vec<ParameterSet>> {
    let run = |c: &mut C| c.local_update(global, config.batch_size(), lr, config.local_epochs);
    if config.parallel {
        clients.par_iter_mut().map(run).collect()
    } else {
        clients.iter_mut().map(run).collect()
    }
}

fn validation_losses<C: FederatedClient>(clients: &[C], global: &ParameterSet, parallel: bool) -> Result<Vec<f64>> {
    if parallel {
        clients.par_iter().map(|c| c.validation_loss(global)).collect()
    } else {
        clients.iter().map(|c| c.validation_loss(global)).collect()
    }
}

/// Runs FedAvg rounds until the averaged validation loss has not improved
/// for `patience` rounds, and returns the global model of the best round.
pub fn run_federation<C: FederatedClient>(
    initial: &ParameterSet,
    clients: &mut [C],
    config: &FederationConfig,
) -> Result<FederationOutcome> {
    config.validate()?;
    if clients.len() != config.clients {
        return Err(Error::config(format!("configured for {} clients, got {}", config.clients, clients.len())));
    }
    clients.sort_by_key(|c| c.id());
    if clients.windows(2).any(|w| w[0].id() == w[1].id()) {
        return Err(Error::config("client ids must be unique"));
    }
    if let Some(c) = clients.iter().find(|c| c.train_size() == 0) {
        return Err(Error::config(format!("client {} has no training samples", c.id())));
    }
    let sizes: Vec<usize> = clients.iter().map(|c| c.train_size()).collect();
    let total: usize = sizes.iter().sum();

    let mut global = initial.clone();
    let mut best = initial.clone();
    let mut best_round = 0;
    let mut best_loss = f64::INFINITY;
    let mut history = Vec::new();
    let mut stopped_early = false;
    for round in 0..config.max_rounds {
        let lr = config.learning_rate_at(round);
        let updates = local_updates(clients, &global, config, lr)?;
        let refs: Vec<&ParameterSet> = updates.iter().collect();
        global = fedavg_aggregate(&refs, &sizes)?;
        let losses = validation_losses(clients, &global, config.parallel)?;
        let average = if config.weighted_validation {
            losses.iter().zip(&sizes).map(|(l, &n)| l * n as f64).sum::<f64>() / total as f64
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        if !average.is_finite() {
            return Err(Error::Numeric {
                layer: "federation".into(),
                detail: format!("round {}: average loss {average}", round + 1),
            });
        }
        log::debug!("round {}: lr {lr} avg val {average:.5}", round + 1);
        history.push(RoundRecord {
            round: round + 1,
            learning_rate: lr,
            client_losses: losses,
            average_loss: average,
            checksum: global.checksum(),
        });
        if average < best_loss {
            best_loss = average;
            best_round = round + 1;
            best = global.clone();
        }
        if round + 1 - best_round >= config.patience {
            stopped_early = round + 1 < config.max_rounds;
            break;
        }
    }
    if let Some(path) = &config.history_path {
        write_round_history(path, &history)?;
    }
    if let Some(path) = &config.checkpoint_path {
        best.write_to(BufWriter::new(File::create(path)?))?;
    }
    Ok(FederationOutcome { params: best, best_round, best_loss, history, stopped_early })
}

/// Columns: round, one validation loss per client, avg_val_loss, lr.
pub fn write_round_history(path: &std::path::Path, history: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    let k = history.first().map_or(0, |r| r.client_losses.len());
    let mut header = vec!["round".to_string()];
    header.extend((0..k).map(|i| format!("client{i}_val_loss")));
    header.extend(["avg_val_loss".to_string(), "lr".to_string()]);
    w.write_record(&header)?;
    for r in history {
        let mut row = vec![r.round.to_string()];
        row.extend(r.client_losses.iter().map(f64::to_string));
        row.extend([r.average_loss.to_string(), r.learning_rate.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
