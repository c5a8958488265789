//! From irregular patient series to model-ready windows.
//!
//! For a window of `W` hours ending at a patient's last observation, vitals
//! are averaged into `W` hourly bins and labs into `W/8` eight-hour bins.
//! Bins are half-open on the left and anchored at the window end, so the last
//! bin always closes at the anchor time. Gaps between observed bins are
//! linearly interpolated, leading and trailing gaps take the nearest observed
//! value, and never-observed variables take the training population mean.
//! Finally every variable is z-scored with training statistics.

mod dataset;
mod io;
mod normalize;
mod window;

pub use dataset::Dataset;
pub use io::{read_cohort, read_cohort_dir, write_cohort, write_cohort_dir, EVENTS_FILE, LABELS_FILE};
pub use normalize::{fit_normalization, fit_population_means, NormalizationStats};
pub use window::{build_sample, extract_window, impute, resample, GappyMatrix, RawWindow};

use crate::error::{Error, Result};
use crate::model::{LAB_BIN_HOURS, LAB_COUNT, VITAL_COUNT};

pub const VITAL_NAMES: [&str; VITAL_COUNT] =
    ["heart_rate", "systolic_bp", "diastolic_bp", "mean_bp", "respiratory_rate", "temperature", "spo2"];

pub const LAB_NAMES: [&str; LAB_COUNT] = [
    "albumin",
    "bun",
    "bilirubin",
    "lactate",
    "bicarbonate",
    "band_neutrophils",
    "chloride",
    "creatinine",
    "glucose",
    "hemoglobin",
    "hematocrit",
    "platelet",
    "potassium",
    "ptt",
    "sodium",
    "wbc",
];

pub const VARIABLE_COUNT: usize = VITAL_COUNT + LAB_COUNT;

/// Name of variable `index`; vitals come first, then labs.
pub fn variable_name(index: usize) -> &'static str {
    if index < VITAL_COUNT {
        VITAL_NAMES[index]
    } else {
        LAB_NAMES[index - VITAL_COUNT]
    }
}

pub fn variable_index(name: &str) -> Option<usize> {
    VITAL_NAMES.iter().chain(LAB_NAMES.iter()).position(|&n| n == name)
}

pub fn check_window(window: usize) -> Result<()> {
    if window == 0 || !window.is_multiple_of(LAB_BIN_HOURS) {
        return Err(Error::config(format!("window {window}h is not a positive multiple of {LAB_BIN_HOURS}h")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    /// Hours since an arbitrary per-patient origin.
    pub time: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(time: f64, value: f64) -> Self {
        Self { time, value }
    }
}

/// One patient's irregularly sampled series of all 23 variables.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    id: String,
    label: u8,
    series: Vec<Vec<Observation>>,
    anchor: f64,
}

impl PatientRecord {
    /// Validates the record and stably sorts each series by time.
    pub fn new(id: impl Into<String>, label: u8, mut series: Vec<Vec<Observation>>) -> Result<Self> {
        let id = id.into();
        if label > 1 {
            return Err(Error::config(format!("patient {id}: label {label} is not 0 or 1")));
        }
        if series.len() != VARIABLE_COUNT {
            return Err(Error::config(format!("patient {id}: expected {VARIABLE_COUNT} series, got {}", series.len())));
        }
        let mut anchor = f64::NEG_INFINITY;
        for s in &mut series {
            if s.iter().any(|o| !o.time.is_finite() || !o.value.is_finite()) {
                return Err(Error::config(format!("patient {id}: non-finite observation")));
            }
            s.sort_by(|a, b| a.time.total_cmp(&b.time));
            if let Some(last) = s.last() {
                anchor = anchor.max(last.time);
            }
        }
        if anchor == f64::NEG_INFINITY {
            return Err(Error::config(format!("patient {id}: no observations")));
        }
        Ok(Self { id, label, series, anchor })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    /// Time of the last observation of any variable.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn series(&self, variable: usize) -> &[Observation] {
        &self.series[variable]
    }

    pub fn all_series(&self) -> &[Vec<Observation>] {
        &self.series
    }

    pub fn observation_count(&self) -> usize {
        self.series.iter().map(Vec::len).sum()
    }
}

/// Dense, gap-free model input for one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    pub patient_id: String,
    pub label: u8,
    pub window: usize,
    /// `W × 7`, row-major.
    pub vitals: Vec<f64>,
    /// `W/8 × 16`, row-major.
    pub labs: Vec<f64>,
}

impl WindowedSample {
    pub fn vital_rows(&self) -> usize {
        self.vitals.len() / VITAL_COUNT
    }

    pub fn lab_rows(&self) -> usize {
        self.labs.len() / LAB_COUNT
    }

    pub fn is_finite(&self) -> bool {
        self.vitals.iter().chain(&self.labs).all(|v| v.is_finite())
    }
}
