//! The CML / LML / FL comparison over folds, families, windows and client
//! counts.

use rayon::prelude::*;

use super::metrics::{auprc, f1_score, F1_THRESHOLD};
use super::report::{CellResult, ExperimentReport};
use super::splits::{Approach, FoldSplit, SplitPlan};
use crate::error::{Error, Result};
use crate::federation::{run_federation, FederationConfig, FederationOutcome, LocalClient, BASE_BATCH_SIZE};
use crate::model::{Family, Model};
use crate::numeric::ParameterSet;
use crate::pipeline::{Dataset, NormalizationStats, PatientRecord};
use crate::seed;
use crate::trainer::{predict, train, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub families: Vec<Family>,
    pub windows: Vec<usize>,
    pub clients: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
    pub skew: f64,
    pub cml: bool,
    pub lml: bool,
    pub fl: bool,
    /// CML and LML schedule. `batch_size` is the CML batch; LML and FL use
    /// `max(batch_size / K, 1)`.
    pub train: TrainConfig,
    /// FL schedule; the client count and batch size are set per arm.
    pub federation: FederationConfig,
    /// Concurrent jobs; 1 runs everything on the calling thread.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            families: vec![Family::Lstm],
            windows: vec![8],
            clients: vec![2, 4, 8],
            folds: 5,
            seed: 0,
            skew: 0.0,
            cml: true,
            lml: true,
            fl: true,
            train: TrainConfig { batch_size: BASE_BATCH_SIZE, ..TrainConfig::default() },
            federation: FederationConfig::default(),
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn approaches(&self) -> Vec<Approach> {
        let mut out = Vec::new();
        if self.cml {
            out.push(Approach::Cml);
        }
        if self.lml {
            out.extend(self.clients.iter().map(|&k| Approach::Lml(k)));
        }
        if self.fl {
            out.extend(self.clients.iter().map(|&k| Approach::Fl(k)));
        }
        out
    }

    pub fn client_batch(&self, k: usize) -> usize {
        (self.train.batch_size / k.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() || self.windows.is_empty() {
            return Err(Error::config("need at least one family and one window"));
        }
        for &w in &self.windows {
            crate::pipeline::check_window(w)?;
        }
        if (self.lml || self.fl) && self.clients.is_empty() {
            return Err(Error::config("LML and FL need at least one client count"));
        }
        if self.approaches().is_empty() {
            return Err(Error::config("no approach selected"));
        }
        if self.jobs == 0 {
            return Err(Error::config("jobs must be at least 1"));
        }
        self.train.validate()?;
        FederationConfig { clients: 1, ..self.federation.clone() }.validate()
    }

    /// Shared initial weights for a fold; identical across approaches.
    pub fn init_seed(&self, fold: usize) -> u64 {
        seed::derive(self.seed, &[0x1417, fold as u64])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub auprc: f64,
    pub f1: f64,
}

/// Everything one approach produced on one fold.
#[derive(Clone, Debug)]
pub struct ArmOutput {
    pub approach: Approach,
    pub fold: usize,
    /// One per model: 1 for CML and FL, K for LML.
    pub scores: Vec<Score>,
    pub models: Vec<ParameterSet>,
    pub training: Vec<TrainOutcome>,
    pub federation: Option<FederationOutcome>,
}

struct Prepared {
    stats: NormalizationStats,
    train: Dataset,
    validation: Dataset,
}

fn select<'a>(records: &'a [PatientRecord], idx: &[usize]) -> Vec<&'a PatientRecord> {
    idx.iter().map(|&i| &records[i]).collect()
}

fn prepare(records: &[PatientRecord], train_idx: &[usize], val_idx: &[usize], window: usize) -> Result<Prepared> {
    let (stats, raw) = NormalizationStats::fit(&select(records, train_idx), window)?;
    let train = Dataset::from_samples(window, &stats.apply_all(&raw))?;
    let validation = Dataset::from_samples(window, &stats.transform(&select(records, val_idx))?)?;
    Ok(Prepared { stats, train, validation })
}

fn score(model: &Model, params: &ParameterSet, test: &Dataset) -> Result<Score> {
    let preds = predict(model, params, test)?;
    Ok(Score { auprc: auprc(&preds, test.labels())?, f1: f1_score(&preds, test.labels(), F1_THRESHOLD)? })
}

fn test_set(records: &[PatientRecord], split: &FoldSplit, stats: &NormalizationStats) -> Result<Dataset> {
    Dataset::from_samples(stats.window, &stats.transform(&select(records, &split.test))?)
}

fn client_shards(split: &FoldSplit, k: usize) -> Result<&[crate::cohort::ClientCohort]> {
    split
        .clients
        .get(&k)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::config(format!("split plan has no {k}-client partition")))
}

/// Trains and scores one approach on one fold.
pub fn run_arm(
    records: &[PatientRecord],
    plan: &SplitPlan,
    fold: usize,
    family: Family,
    window: usize,
    approach: Approach,
    config: &ExperimentConfig,
) -> Result<ArmOutput> {
    let split = plan.splits.get(fold).ok_or_else(|| Error::config(format!("fold {fold} is out of range")))?;
    let model = Model::build(family, window)?;
    let init = model.init_parameters(config.init_seed(fold));
    let tag = match approach {
        Approach::Cml => 0,
        Approach::Lml(k) => 0x1000 + k as u64,
        Approach::Fl(k) => 0x2000 + k as u64,
    };
    let mut out =
        ArmOutput { approach, fold, scores: Vec::new(), models: Vec::new(), training: Vec::new(), federation: None };
    match approach {
        Approach::Cml => {
            let p = prepare(records, &split.cml_train, &split.cml_validation, window)?;
            let cfg = TrainConfig {
                seed: seed::derive(config.seed, &[tag, fold as u64]),
                history_path: None,
                ..config.train.clone()
            };
            let outcome = train(&model, &init, &p.train, &p.validation, &cfg)?;
            out.scores.push(score(&model, &outcome.params, &test_set(records, split, &p.stats)?)?);
            out.models.push(outcome.params.clone());
            out.training.push(outcome);
        }
        Approach::Lml(k) => {
            for shard in client_shards(split, k)? {
                let p = prepare(records, &shard.train, &shard.validation, window)?;
                let cfg = TrainConfig {
                    batch_size: config.client_batch(k).min(p.train.len()),
                    seed: seed::derive(config.seed, &[tag, fold as u64, shard.id as u64]),
                    history_path: None,
                    ..config.train.clone()
                };
                let outcome = train(&model, &init, &p.train, &p.validation, &cfg)?;
                out.scores.push(score(&model, &outcome.params, &test_set(records, split, &p.stats)?)?);
                out.models.push(outcome.params.clone());
                out.training.push(outcome);
            }
        }
        Approach::Fl(k) => {
            let client_seed = seed::derive(config.seed, &[tag, fold as u64]);
            let mut clients = client_shards(split, k)?
                .iter()
                .map(|c| LocalClient::from_records(&model, c, records, &init, client_seed))
                .collect::<Result<Vec<_>>>()?;
            let stats: Vec<NormalizationStats> = clients.iter().filter_map(|c| c.stats().cloned()).collect();
            let pooled = NormalizationStats::pooled(&stats)?;
            let cfg = FederationConfig {
                clients: k,
                batch_size: Some(config.client_batch(k)),
                seed: client_seed,
                parallel: config.jobs > 1,
                history_path: None,
                checkpoint_path: None,
                ..config.federation.clone()
            };
            let outcome = run_federation(&init, &mut clients, &cfg)?;
            out.scores.push(score(&model, &outcome.params, &test_set(records, split, &pooled)?)?);
            out.models.push(outcome.params.clone());
            out.federation = Some(outcome);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Job {
    family: Family,
    window: usize,
    approach: Approach,
    fold: usize,
}

/// Runs every (family, window, approach) cell over all folds and collects
/// the scores. A failing run marks its cell as failed; the others continue.
pub fn run_experiment_matrix(records: &[PatientRecord], config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let labels: Vec<u8> = records.iter().map(PatientRecord::label).collect();
    let client_counts: Vec<usize> = if config.lml || config.fl { config.clients.clone() } else { Vec::new() };
    let plan = SplitPlan::build(&labels, config.folds, &client_counts, config.skew, config.seed)?;
    run_with_plan(records, &plan, config)
}

/// As [`run_experiment_matrix`] with a prebuilt split plan.
pub fn run_with_plan(
    records: &[PatientRecord],
    plan: &SplitPlan,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.validate()?;
    let mut jobs = Vec::new();
    for &family in &config.families {
        for &window in &config.windows {
            for approach in config.approaches() {
                for fold in 0..plan.folds {
                    jobs.push(Job { family, window, approach, fold });
                }
            }
        }
    }
    let run = |job: &Job| {
        let r = run_arm(records, plan, job.fold, job.family, job.window, job.approach, config).map(|o| o.scores);
        match &r {
            Ok(s) => log::info!(
                "{} {} {}h fold {}: auprc {:?}",
                job.approach.label(),
                job.family,
                job.window,
                job.fold,
                s.iter().map(|x| x.auprc).collect::<Vec<_>>()
            ),
            Err(e) => {
                log::error!("{} {} {}h fold {} failed: {e}", job.approach.label(), job.family, job.window, job.fold)
            }
        }
        r
    };
    let results: Vec<Result<Vec<Score>>> = if config.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };

    let mut cells: Vec<CellResult> = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        let idx = match cells
            .iter()
            .position(|c| c.family == job.family && c.window == job.window && c.approach == job.approach)
        {
            Some(i) => i,
            None => {
                cells.push(CellResult {
                    approach: job.approach,
                    family: job.family,
                    window: job.window,
                    auprc: Vec::new(),
                    f1: Vec::new(),
                    failure: None,
                });
                cells.len() - 1
            }
        };
        let cell = &mut cells[idx];
        if cell.failure.is_some() {
            continue;
        }
        match result {
            Ok(scores) => {
                cell.auprc.extend(scores.iter().map(|s| s.auprc));
                cell.f1.extend(scores.iter().map(|s| s.f1));
            }
            Err(e) => {
                cell.failure = Some(format!("fold {}: {e}", job.fold));
                cell.auprc.clear();
                cell.f1.clear();
            }
        }
    }
    Ok(ExperimentReport::new(cells))
}
