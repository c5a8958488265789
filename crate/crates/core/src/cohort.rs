//! Seeded synthetic cohorts and client partitioning.
//!
//! Generative process, per patient:
//! - the stay lasts `U(duration.0, duration.1)` hours;
//! - each variable has a patient-level offset `N(0, (between·σ)²)` around its
//!   baseline mean, and each observation adds `N(0, (within·σ·inflation)²)`;
//! - event times follow a Poisson process (exponential inter-arrival) whose
//!   rate is drawn uniformly from the vital or lab rate range;
//! - positive patients get a severity `s ~ U(severity.0, severity.1)`; over
//!   the final `signal_hours` of the stay every signal variable drifts
//!   linearly by up to `direction · strength · s · σ`, and the observation
//!   noise is inflated by up to `1 + strength · s / 2`.
//!
//! Negatives are stationary. With `signal_strength = 0` the labels are
//! independent of the series.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::splits::{deal_stratified, stratified_split, VALIDATION_FRACTION};
use crate::model::{LAB_BIN_HOURS, SUPPORTED_WINDOWS, VITAL_COUNT};
use crate::pipeline::{Observation, PatientRecord, VARIABLE_COUNT};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariableProfile {
    pub mean: f64,
    pub std: f64,
}

const fn profile(mean: f64, std: f64) -> VariableProfile {
    VariableProfile { mean, std }
}

/// Baselines in the order of [`crate::pipeline::VITAL_NAMES`] then
/// [`crate::pipeline::LAB_NAMES`].
pub const DEFAULT_PROFILES: [VariableProfile; VARIABLE_COUNT] = [
    profile(85.0, 15.0),
    profile(120.0, 20.0),
    profile(65.0, 12.0),
    profile(82.0, 13.0),
    profile(19.0, 5.0),
    profile(37.0, 0.7),
    profile(97.0, 2.0),
    profile(3.0, 0.6),
    profile(25.0, 15.0),
    profile(1.2, 1.5),
    profile(2.0, 1.2),
    profile(24.0, 4.0),
    profile(5.0, 6.0),
    profile(104.0, 5.0),
    profile(1.3, 1.0),
    profile(130.0, 40.0),
    profile(10.5, 2.0),
    profile(31.0, 5.5),
    profile(200.0, 90.0),
    profile(4.1, 0.6),
    profile(35.0, 12.0),
    profile(139.0, 4.0),
    profile(11.0, 5.0),
];

/// (variable index, drift direction) pairs carrying the outcome signal.
pub const DEFAULT_SIGNAL: [(usize, f64); 10] = [
    (0, 1.0),   // heart_rate
    (1, -1.0),  // systolic_bp
    (3, -1.0),  // mean_bp
    (4, 1.0),   // respiratory_rate
    (6, -1.0),  // spo2
    (8, 1.0),   // bun
    (10, 1.0),  // lactate
    (11, -1.0), // bicarbonate
    (14, 1.0),  // creatinine
    (22, 1.0),  // wbc
];

pub const DEFAULT_SIGNAL_STRENGTH: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CohortConfig {
    pub patients: usize,
    pub positive_fraction: f64,
    pub seed: u64,
    pub profiles: Vec<VariableProfile>,
    /// Vital events per hour.
    pub vital_rate: (f64, f64),
    /// Lab events per 8 hours.
    pub lab_rate: (f64, f64),
    /// Stay length in hours.
    pub duration: (f64, f64),
    /// Between-patient offset, in units of the variable's std.
    pub between_std: f64,
    /// Within-patient observation noise, in units of the variable's std.
    pub within_std: f64,
    pub signal_strength: f64,
    pub signal_hours: f64,
    pub signal_variables: Vec<(usize, f64)>,
    pub severity: (f64, f64),
    /// Dirichlet skew used when partitioning clients; 0 is stratified.
    pub client_skew: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            patients: 2000,
            positive_fraction: 0.0975,
            seed: 1,
            profiles: DEFAULT_PROFILES.to_vec(),
            vital_rate: (0.5, 1.5),
            lab_rate: (1.0, 2.0),
            duration: (48.0, 96.0),
            between_std: 0.5,
            within_std: 0.5,
            signal_strength: DEFAULT_SIGNAL_STRENGTH,
            signal_hours: 12.0,
            signal_variables: DEFAULT_SIGNAL.to_vec(),
            severity: (0.0, 1.0),
            client_skew: 0.0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo >= min && lo <= hi) {
        return Err(Error::config(format!("{name} range ({lo}, {hi}) is invalid")));
    }
    Ok(())
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patients == 0 {
            return Err(Error::config("cohort needs at least one patient"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::config(format!("positive fraction {} is outside (0, 1)", self.positive_fraction)));
        }
        if self.profiles.len() != VARIABLE_COUNT {
            return Err(Error::config(format!(
                "expected {VARIABLE_COUNT} variable profiles, got {}",
                self.profiles.len()
            )));
        }
        if self.profiles.iter().any(|p| !p.mean.is_finite() || !(p.std > 0.0 && p.std.is_finite())) {
            return Err(Error::config("variable profiles need finite means and positive stds"));
        }
        check_range("vital rate", self.vital_rate, f64::MIN_POSITIVE)?;
        check_range("lab rate", self.lab_rate, f64::MIN_POSITIVE)?;
        let longest = SUPPORTED_WINDOWS[SUPPORTED_WINDOWS.len() - 1] as f64;
        check_range("duration", self.duration, longest)?;
        check_range("severity", self.severity, 0.0)?;
        for (name, v) in [
            ("between_std", self.between_std),
            ("within_std", self.within_std),
            ("signal strength", self.signal_strength),
            ("client skew", self.client_skew),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.signal_hours > 0.0 && self.signal_hours.is_finite()) {
            return Err(Error::config("signal hours must be positive"));
        }
        if let Some(&(v, _)) = self.signal_variables.iter().find(|(v, d)| *v >= VARIABLE_COUNT || !d.is_finite()) {
            return Err(Error::config(format!("signal variable {v} is invalid")));
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        (self.patients as f64 * self.positive_fraction).round() as usize
    }
}

/// Labels with exactly `round(n · fraction)` positives at seeded positions.
fn draw_labels(config: &CohortConfig) -> Vec<u8> {
    let mut order: Vec<usize> = (0..config.patients).collect();
    order.shuffle(&mut seed::rng(config.seed, &[0x1ABE]));
    let mut labels = vec![0u8; config.patients];
    for &i in &order[..config.positive_count()] {
        labels[i] = 1;
    }
    labels
}

fn event_times(rng: &mut impl Rng, rate_per_hour: f64, duration: f64) -> Vec<f64> {
    let gaps = Exp::new(rate_per_hour).expect("validated rate");
    let mut times = Vec::new();
    let mut t = gaps.sample(rng);
    while t <= duration {
        times.push(t);
        t += gaps.sample(rng);
    }
    times
}

fn generate_patient(config: &CohortConfig, index: usize, label: u8) -> Result<PatientRecord> {
    let mut rng = seed::rng(config.seed, &[0xC0407, index as u64]);
    let duration = rng.random_range(config.duration.0..=config.duration.1);
    let severity = if label == 1 { rng.random_range(config.severity.0..=config.severity.1) } else { 0.0 };
    let onset = duration - config.signal_hours;
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let mut series = Vec::with_capacity(VARIABLE_COUNT);
    for (v, p) in config.profiles.iter().enumerate() {
        let rate = if v < VITAL_COUNT {
            rng.random_range(config.vital_rate.0..=config.vital_rate.1)
        } else {
            rng.random_range(config.lab_rate.0..=config.lab_rate.1) / LAB_BIN_HOURS as f64
        };
        let offset = config.between_std * p.std * standard.sample(&mut rng);
        let direction = config.signal_variables.iter().find(|(s, _)| *s == v).map(|&(_, d)| d);
        let mut obs = Vec::new();
        for t in event_times(&mut rng, rate, duration) {
            let mut drift = 0.0;
            let mut inflation = 1.0;
            if let Some(d) = direction {
                let progress = ((t - onset) / config.signal_hours).clamp(0.0, 1.0);
                let amount = config.signal_strength * severity * progress;
                drift = d * amount * p.std;
                inflation += 0.5 * amount;
            }
            let noise = config.within_std * p.std * inflation * standard.sample(&mut rng);
            obs.push(Observation::new(t, p.mean + offset + drift + noise));
        }
        series.push(obs);
    }
    if series.iter().all(Vec::is_empty) {
        series[0].push(Observation::new(duration, config.profiles[0].mean));
    }
    PatientRecord::new(format!("p{index:06}"), label, series)
}

/// Generates the cohort. Patients are independent streams keyed by
/// `(seed, index)`, so generation runs in parallel without affecting output.
pub fn generate(config: &CohortConfig) -> Result<Vec<PatientRecord>> {
    config.validate()?;
    let labels = draw_labels(config);
    labels.par_iter().enumerate().map(|(i, &y)| generate_patient(config, i, y)).collect()
}

/// One client's disjoint share of a training pool. Indices refer to the
/// caller's sample list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientCohort {
    pub id: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl ClientCohort {
    /// `n_k`, the FedAvg weight numerator.
    pub fn train_size(&self) -> usize {
        self.train.len()
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.validation).copied()
    }
}

/// Largest-remainder apportionment of `total` by `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - counts.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    counts
}

/// Splits `indices` into `k` disjoint client cohorts, each with a stratified
/// 85/15 train/validation split.
///
/// `skew = 0` deals each class round-robin (stratified, equal sizes). For
/// `skew > 0` each class is apportioned by a draw from a symmetric
/// Dirichlet with concentration `1/skew`, after guaranteeing every client one
/// member of each class.
pub fn partition_indices(
    indices: &[usize],
    labels: &[u8],
    k: usize,
    skew: f64,
    seed: u64,
) -> Result<Vec<ClientCohort>> {
    if k == 0 {
        return Err(Error::config("client count must be at least 1"));
    }
    if !(skew >= 0.0 && skew.is_finite()) {
        return Err(Error::config(format!("client skew {skew} must be finite and non-negative")));
    }
    let pos = indices.iter().filter(|&&i| labels[i] == 1).count();
    let minority = pos.min(indices.len() - pos);
    if k > minority {
        return Err(Error::config(format!("{k} clients exceed the {minority} records of the minority class")));
    }
    let mut rng = seed::rng(seed, &[0xD1C1]);
    let shards = if skew == 0.0 {
        deal_stratified(indices, labels, k, &mut rng)
    } else {
        let gamma = Gamma::new(1.0 / skew, 1.0).map_err(|e| Error::config(format!("client skew {skew}: {e}")))?;
        let mut shards = vec![Vec::new(); k];
        for class in [1u8, 0] {
            let mut members: Vec<usize> =
                indices.iter().copied().filter(|&i| (labels[i] == 1) == (class == 1)).collect();
            members.shuffle(&mut rng);
            let weights: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE)).collect();
            let counts = apportion(members.len() - k, &weights);
            let mut rest = members.into_iter();
            for (shard, c) in shards.iter_mut().zip(counts) {
                shard.extend(rest.by_ref().take(c + 1));
            }
        }
        for s in &mut shards {
            s.sort_unstable();
        }
        shards
    };
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| {
            let (train, validation) =
                stratified_split(&shard, labels, VALIDATION_FRACTION, seed::derive(seed, &[0x5A11, id as u64]));
            ClientCohort { id, train, validation }
        })
        .collect())
}

/// Partitions a whole cohort among `k` clients.
pub fn partition_clients(records: &[PatientRecord], k: usize, skew: f64, seed: u64) -> Result<Vec<ClientCohort>> {
    let labels: Vec<u8> = records.iter().map(PatientRecord::label).collect();
    let all: Vec<usize> = (0..records.len()).collect();
    partition_indices(&all, &labels, k, skew, seed)
}
