//! Client side: one simulated hospital holding its shard, its own
//! normalization statistics and a persistent optimizer.

use crate::cohort::ClientCohort;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::ParameterSet;
use crate::pipeline::{Dataset, NormalizationStats, PatientRecord};
use crate::trainer::{compute_class_weights, evaluate_loss, Trainer};

use super::FederatedClient;

pub struct LocalClient<'m> {
    id: usize,
    trainer: Trainer<'m>,
    train: Dataset,
    validation: Dataset,
    stats: Option<NormalizationStats>,
}

impl<'m> LocalClient<'m> {
    /// Class weights come from the training shard. The trainer seed is
    /// `seed + id`, so a single client with id 0 shuffles like a centralized
    /// run with the same seed.
    pub fn new(
        model: &'m Model,
        id: usize,
        train: Dataset,
        validation: Dataset,
        initial: &ParameterSet,
        seed: u64,
    ) -> Result<Self> {
        if train.is_empty() || validation.is_empty() {
            return Err(Error::config(format!("client {id} needs non-empty training and validation shards")));
        }
        let weights = compute_class_weights(train.labels())?;
        let trainer = Trainer::new(model, initial.clone(), weights, seed.wrapping_add(id as u64))?;
        Ok(Self { id, trainer, train, validation, stats: None })
    }

    /// Fits local normalization on the cohort's training records and builds
    /// both shards with it.
    pub fn from_records(
        model: &'m Model,
        cohort: &ClientCohort,
        records: &[PatientRecord],
        initial: &ParameterSet,
        seed: u64,
    ) -> Result<Self> {
        let window = model.spec().window;
        let train: Vec<&PatientRecord> = cohort.train.iter().map(|&i| &records[i]).collect();
        let val: Vec<&PatientRecord> = cohort.validation.iter().map(|&i| &records[i]).collect();
        let (stats, raw) = NormalizationStats::fit(&train, window)?;
        let train = Dataset::from_samples(window, &stats.apply_all(&raw))?;
        let validation = Dataset::from_samples(window, &stats.transform(&val)?)?;
        let mut client = Self::new(model, cohort.id, train, validation, initial, seed)?;
        client.stats = Some(stats);
        Ok(client)
    }

    pub fn stats(&self) -> Option<&NormalizationStats> {
        self.stats.as_ref()
    }

    pub fn trainer(&self) -> &Trainer<'m> {
        &self.trainer
    }
}

impl FederatedClient for LocalClient<'_> {
    fn id(&self) -> usize {
        self.id
    }

    fn train_size(&self) -> usize {
        self.train.len()
    }

    fn local_update(
        &mut self,
        global: &ParameterSet,
        batch_size: usize,
        learning_rate: f64,
        epochs: usize,
    ) -> Result<ParameterSet> {
        let batch_size = batch_size.min(self.train.len());
        self.trainer.local_pass(global, &self.train, batch_size, learning_rate, epochs)
    }

    fn validation_loss(&self, global: &ParameterSet) -> Result<f64> {
        evaluate_loss(self.trainer.model(), global, &self.validation, self.trainer.class_weights())
    }
}
