//! Mini-batch Adam training with class weighting, step decay and early
//! stopping, plus the single local pass used by federated clients.

use std::fs::File;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::loss::weighted_bce_terms;
use crate::numeric::{weighted_bce_loss, AdamConfig, AdamState, ClassWeights, ParameterSet};
use crate::pipeline::Dataset;
use crate::seed;

/// Samples per eval-mode forward pass. Batch norm is per-sample in eval mode,
/// so chunking does not change results.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs; 1 disables decay.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub patience: usize,
    pub seed: u64,
    /// Per-epoch CSV log (epoch, lr, train_loss, val_loss).
    pub history_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 64,
            learning_rate: 0.01,
            decay_factor: 0.5,
            decay_every: 5,
            patience: 30,
            seed: 0,
            history_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max epochs must be at least 1"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config(format!("patience {} exceeds max epochs {}", self.patience, self.max_epochs)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config(format!("decay factor {} is outside (0, 1]", self.decay_factor)));
        }
        if self.decay_every == 0 {
            return Err(Error::config("decay interval must be at least 1 epoch"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        Ok(())
    }

    /// Learning rate for a 0-indexed epoch: `lr0 · factor^⌊epoch/every⌋`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// `w_pos = n / (2 n_pos)`, `w_neg = n / (2 n_neg)`.
pub fn compute_class_weights(labels: &[f64]) -> Result<ClassWeights> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y >= 0.5).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::config(format!("class weights need both classes ({pos} positive, {neg} negative)")));
    }
    Ok(ClassWeights { positive: n / (2.0 * pos), negative: n / (2.0 * neg) })
}

/// Patience counter over a minimized metric. Only strict improvements reset it.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, epochs: 0 }
    }

    /// Records one epoch's metric. Returns true if it is a new best.
    pub fn observe(&mut self, value: f64) -> bool {
        self.epochs += 1;
        if value < self.best {
            self.best = value;
            self.best_epoch = self.epochs;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.epochs - self.best_epoch >= self.patience
    }

    /// 1-based epoch of the best value; 0 before any observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Eval-mode predictions for every sample of `data`.
pub fn predict(model: &Model, params: &ParameterSet, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (batch, _) = data.batch(chunk);
        out.extend(model.predict(params, &batch)?);
    }
    Ok(out)
}

/// Mean weighted cross-entropy in eval mode.
pub fn evaluate_loss(model: &Model, params: &ParameterSet, data: &Dataset, weights: ClassWeights) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty set"));
    }
    let preds = predict(model, params, data)?;
    let loss = weighted_bce_terms(&preds, data.labels(), weights).iter().sum::<f64>() / data.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric { layer: "loss".into(), detail: format!("validation loss is {loss}") });
    }
    Ok(loss)
}

/// Owns the working parameters and optimizer state of one training party.
/// The epoch counter keys the shuffle, so a trainer reused across FL rounds
/// draws the same batch orders as a centralized run over the same data.
#[derive(Clone, Debug)]
pub struct Trainer<'m> {
    model: &'m Model,
    params: ParameterSet,
    adam: AdamState,
    weights: ClassWeights,
    seed: u64,
    epochs_run: u64,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Model, params: ParameterSet, weights: ClassWeights, seed: u64) -> Result<Self> {
        model.check_params(&params)?;
        let adam = AdamState::new(&params, AdamConfig::default());
        Ok(Self { model, params, adam, weights, seed, epochs_run: 0 })
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn class_weights(&self) -> ClassWeights {
        self.weights
    }

    pub fn epochs_run(&self) -> u64 {
        self.epochs_run
    }

    /// One shuffled pass over `data`. Returns the mean of the per-batch losses.
    pub fn run_epoch(&mut self, data: &Dataset, batch_size: usize, learning_rate: f64) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        if batch_size == 0 || batch_size > data.len() {
            return Err(Error::config(format!("batch size {batch_size} is not in 1..={} samples", data.len())));
        }
        let epoch = self.epochs_run;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seed::rng(self.seed, &[0xE90C, epoch]));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let (batch, labels) = data.batch(chunk);
            let pass = self.model.forward_train(&mut self.params, &batch).map_err(|e| at_epoch(e, epoch))?;
            let (loss, grad) =
                weighted_bce_loss(&pass.predictions, &labels, self.weights).map_err(|e| at_epoch(e, epoch))?;
            let grads = self.model.backward(&self.params, &pass.cache, &grad).map_err(|e| at_epoch(e, epoch))?;
            self.adam.apply(&mut self.params, &grads, learning_rate)?;
            total += loss;
            batches += 1;
        }
        self.epochs_run += 1;
        Ok(total / batches as f64)
    }

    /// Starts from `global` and runs `epochs` passes over the local shard,
    /// keeping the optimizer state from earlier rounds. Returns `w^k`.
    pub fn local_pass(
        &mut self,
        global: &ParameterSet,
        data: &Dataset,
        batch_size: usize,
        learning_rate: f64,
        epochs: usize,
    ) -> Result<ParameterSet> {
        self.model.check_params(global)?;
        self.params = global.clone();
        for _ in 0..epochs {
            self.run_epoch(data, batch_size, learning_rate)?;
        }
        Ok(self.params.clone())
    }
}

fn at_epoch(err: Error, epoch: u64) -> Error {
    match err {
        Error::Numeric { layer, detail } => Error::Numeric { layer, detail: format!("epoch {}: {detail}", epoch + 1) },
        other => other,
    }
}

/// Stand-alone local pass with fresh optimizer state and class weights from
/// the shard. `global` is left untouched.
pub fn local_pass(
    model: &Model,
    global: &ParameterSet,
    data: &Dataset,
    batch_size: usize,
    learning_rate: f64,
    epochs: usize,
    seed: u64,
) -> Result<ParameterSet> {
    if data.is_empty() {
        return Err(Error::config("client shard is empty"));
    }
    let weights = compute_class_weights(data.labels())?;
    Trainer::new(model, global.clone(), weights, seed)?.local_pass(global, data, batch_size, learning_rate, epochs)
}

/// Columns: epoch, lr, train_loss, val_loss.
pub fn write_history(path: &std::path::Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["epoch", "lr", "train_loss", "val_loss"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.learning_rate.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains from `init` until early stopping or `max_epochs`, returning the
/// parameters of the epoch with the lowest validation loss.
pub fn train(
    model: &Model,
    init: &ParameterSet,
    train_set: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let weights = compute_class_weights(train_set.labels())?;
    let mut trainer = Trainer::new(model, init.clone(), weights, config.seed)?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = init.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        let lr = config.learning_rate_at(epoch);
        let train_loss = trainer.run_epoch(train_set, config.batch_size, lr)?;
        let val_loss =
            evaluate_loss(model, trainer.params(), validation, weights).map_err(|e| at_epoch(e, epoch as u64))?;
        history.push(EpochRecord { epoch: epoch + 1, learning_rate: lr, train_loss, val_loss });
        log::debug!("epoch {}: lr {lr} train {train_loss:.5} val {val_loss:.5}", epoch + 1);
        if stopper.observe(val_loss) {
            best = trainer.params().clone();
        }
        if stopper.should_stop() {
            stopped_early = epoch + 1 < config.max_epochs;
            break;
        }
    }
    if let Some(path) = &config.history_path {
        write_history(path, &history)?;
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        history,
        stopped_early,
    })
}
