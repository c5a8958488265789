//! Layered run settings: built-in defaults, then a key=value file, then
//! command-line flags. The resolved map is written next to every output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fedicu_core::cohort::CohortConfig;
use fedicu_core::evaluation::{Approach, ExperimentConfig};
use fedicu_core::federation::FederationConfig;
use fedicu_core::model::Family;
use fedicu_core::trainer::TrainConfig;

pub const SNAPSHOT_FILE: &str = "resolved.conf";

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "1"),
    ("jobs", "1"),
    ("data", ""),
    ("cohort.patients", "2000"),
    ("cohort.positive_fraction", "0.0975"),
    ("cohort.signal_strength", "2"),
    ("cohort.skew", "0"),
    ("experiment.families", "lstm"),
    ("experiment.windows", "8"),
    ("experiment.clients", "2,4,8"),
    ("experiment.folds", "5"),
    ("experiment.fold", "0"),
    ("experiment.approach", "cml"),
    ("experiment.approaches", "cml,lml,fl"),
    ("train.max_epochs", "100"),
    ("train.batch", "64"),
    ("train.lr", "0.01"),
    ("train.decay", "0.5"),
    ("train.decay_every", "5"),
    ("train.patience", "30"),
    ("train.fixed_lr", "false"),
    ("federation.max_rounds", "100"),
    ("federation.local_epochs", "1"),
    ("federation.lr", "0.01"),
    ("federation.patience", "30"),
    ("federation.round_decay", "false"),
    ("federation.weighted_validation", "false"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Layers {
    values: BTreeMap<String, String>,
}

impl Default for Layers {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl Layers {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => bail!("unknown config key `{key}`"),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| anyhow!("expected key=value, got `{pair}`"))?;
        self.set(k.trim(), v)
    }

    /// Reads a file of `key=value` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.assign(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).parse().map_err(|e| anyhow!("config key `{key}`: {e}"))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("config key `{key}`: {e}")))
            .collect()
    }

    pub fn settings(&self) -> Result<Settings> {
        let approaches: Vec<String> = self.list("experiment.approaches")?;
        for a in &approaches {
            if !matches!(a.as_str(), "cml" | "lml" | "fl") {
                bail!("config key `experiment.approaches`: unknown approach `{a}`");
            }
        }
        let approach: String = self.parse("experiment.approach")?;
        if !matches!(approach.as_str(), "cml" | "lml") {
            bail!("config key `experiment.approach`: expected cml or lml, got `{approach}`");
        }
        let fixed_lr: bool = self.parse("train.fixed_lr")?;
        let decay: f64 = self.parse("train.decay")?;
        let decay_every: usize = self.parse("train.decay_every")?;
        let round_decay: bool = self.parse("federation.round_decay")?;
        let seed: u64 = self.parse("seed")?;
        let data = self.get("data");
        let families: Vec<Family> = self.list("experiment.families")?;
        let windows: Vec<usize> = self.list("experiment.windows")?;
        let clients: Vec<usize> = self.list("experiment.clients")?;
        if families.is_empty() || windows.is_empty() {
            bail!("need at least one family and one window");
        }
        let s = Settings {
            seed,
            data: (!data.is_empty()).then(|| PathBuf::from(data)),
            cohort: CohortConfig {
                patients: self.parse("cohort.patients")?,
                positive_fraction: self.parse("cohort.positive_fraction")?,
                signal_strength: self.parse("cohort.signal_strength")?,
                client_skew: self.parse("cohort.skew")?,
                seed,
                ..CohortConfig::default()
            },
            experiment: ExperimentConfig {
                families,
                windows,
                clients,
                folds: self.parse("experiment.folds")?,
                seed,
                skew: self.parse("cohort.skew")?,
                cml: approaches.iter().any(|a| a == "cml"),
                lml: approaches.iter().any(|a| a == "lml"),
                fl: approaches.iter().any(|a| a == "fl"),
                train: TrainConfig {
                    max_epochs: self.parse("train.max_epochs")?,
                    batch_size: self.parse("train.batch")?,
                    learning_rate: self.parse("train.lr")?,
                    decay_factor: if fixed_lr { 1.0 } else { decay },
                    decay_every,
                    patience: self.parse("train.patience")?,
                    seed,
                    history_path: None,
                },
                federation: FederationConfig {
                    max_rounds: self.parse("federation.max_rounds")?,
                    local_epochs: self.parse("federation.local_epochs")?,
                    learning_rate: self.parse("federation.lr")?,
                    patience: self.parse("federation.patience")?,
                    round_decay: (round_decay && !fixed_lr).then_some((decay, decay_every)),
                    weighted_validation: self.parse("federation.weighted_validation")?,
                    seed,
                    ..FederationConfig::default()
                },
                jobs: self.parse("jobs")?,
            },
            fold: self.parse("experiment.fold")?,
            lml: approach == "lml",
        };
        s.cohort.validate()?;
        s.experiment.validate()?;
        if s.fold >= s.experiment.folds {
            bail!("fold {} is out of range for {} folds", s.fold, s.experiment.folds);
        }
        Ok(s)
    }
}

/// Typed view of the resolved layers.
#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub cohort: CohortConfig,
    pub experiment: ExperimentConfig,
    /// Fold used by single runs.
    pub fold: usize,
    /// Single training runs are LML rather than CML.
    pub lml: bool,
}

impl Settings {
    pub fn family(&self) -> Family {
        self.experiment.families[0]
    }

    pub fn window(&self) -> usize {
        self.experiment.windows[0]
    }

    /// Client count for single LML and FL runs.
    pub fn clients(&self) -> Result<usize> {
        self.experiment.clients.first().copied().ok_or_else(|| anyhow!("no client count configured"))
    }

    pub fn train_approach(&self) -> Result<Approach> {
        Ok(if self.lml { Approach::Lml(self.clients()?) } else { Approach::Cml })
    }
}
