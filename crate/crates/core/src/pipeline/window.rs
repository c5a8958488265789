use super::{check_window, Observation, PatientRecord, WindowedSample, VARIABLE_COUNT};
use crate::error::Result;
use crate::model::{LAB_BIN_HOURS, LAB_COUNT, VITAL_COUNT};

/// Observations inside `(anchor - W, anchor]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawWindow {
    pub anchor: f64,
    pub window: usize,
    pub series: Vec<Vec<Observation>>,
}

pub fn extract_window(record: &PatientRecord, window: usize) -> Result<RawWindow> {
    check_window(window)?;
    let anchor = record.anchor();
    let start = anchor - window as f64;
    let series = record
        .all_series()
        .iter()
        .map(|s| s.iter().copied().filter(|o| o.time > start && o.time <= anchor).collect())
        .collect();
    Ok(RawWindow { anchor, window, series })
}

/// Matrix whose cells may be missing.
#[derive(Clone, Debug, PartialEq)]
pub struct GappyMatrix {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Option<f64>>,
}

impl GappyMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, cells: vec![None; rows * cols] }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.cols + col]
    }

    pub fn missing(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }
}

/// Edges of bin `b` out of `bins` bins of width `width` ending at `anchor`.
pub(crate) fn bin_edges(anchor: f64, bins: usize, width: f64, b: usize) -> (f64, f64) {
    let lower = anchor - (bins - b) as f64 * width;
    let upper = anchor - (bins - 1 - b) as f64 * width;
    (lower, upper)
}

fn bin_of(time: f64, anchor: f64, bins: usize, width: f64) -> Option<usize> {
    let back = ((anchor - time) / width).floor();
    let mut b = if back < 0.0 { bins - 1 } else { (bins - 1).saturating_sub(back as usize) };
    while b > 0 && time <= bin_edges(anchor, bins, width, b).0 {
        b -= 1;
    }
    while b + 1 < bins && time > bin_edges(anchor, bins, width, b).1 {
        b += 1;
    }
    let (lo, hi) = bin_edges(anchor, bins, width, b);
    (time > lo && time <= hi).then_some(b)
}

fn bin_means(series: &[Vec<Observation>], anchor: f64, bins: usize, width: f64) -> GappyMatrix {
    let cols = series.len();
    let mut sums = vec![0.0; bins * cols];
    let mut counts = vec![0usize; bins * cols];
    for (c, s) in series.iter().enumerate() {
        for o in s {
            if let Some(b) = bin_of(o.time, anchor, bins, width) {
                sums[b * cols + c] += o.value;
                counts[b * cols + c] += 1;
            }
        }
    }
    let cells = sums.iter().zip(&counts).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect();
    GappyMatrix { rows: bins, cols, cells }
}

/// Hourly vitals and eight-hourly labs; each bin is the mean of its events.
pub fn resample(raw: &RawWindow) -> (GappyMatrix, GappyMatrix) {
    let vitals = bin_means(&raw.series[..VITAL_COUNT], raw.anchor, raw.window, 1.0);
    let labs = bin_means(
        &raw.series[VITAL_COUNT..VARIABLE_COUNT],
        raw.anchor,
        raw.window / LAB_BIN_HOURS,
        LAB_BIN_HOURS as f64,
    );
    (vitals, labs)
}

/// Fills every gap. `column_means` has one entry per column.
pub fn impute(matrix: &GappyMatrix, column_means: &[f64]) -> Vec<f64> {
    let (rows, cols) = (matrix.rows, matrix.cols);
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        let observed: Vec<(usize, f64)> = (0..rows).filter_map(|r| matrix.get(r, c).map(|v| (r, v))).collect();
        let Some(&(first_row, first_val)) = observed.first() else {
            for r in 0..rows {
                out[r * cols + c] = column_means[c];
            }
            continue;
        };
        let &(last_row, last_val) = observed.last().unwrap();
        for r in 0..=first_row {
            out[r * cols + c] = first_val;
        }
        for pair in observed.windows(2) {
            let ((r0, v0), (r1, v1)) = (pair[0], pair[1]);
            for r in r0..=r1 {
                let frac = (r - r0) as f64 / (r1 - r0) as f64;
                out[r * cols + c] = v0 + (v1 - v0) * frac;
            }
        }
        for r in last_row..rows {
            out[r * cols + c] = last_val;
        }
    }
    out
}

/// Window, resample and impute one record (no normalization).
pub fn build_sample(record: &PatientRecord, window: usize, population_means: &[f64]) -> Result<WindowedSample> {
    let raw = extract_window(record, window)?;
    let (v, l) = resample(&raw);
    Ok(WindowedSample {
        patient_id: record.id().to_string(),
        label: record.label(),
        window,
        vitals: impute(&v, &population_means[..VITAL_COUNT]),
        labs: impute(&l, &population_means[VITAL_COUNT..VITAL_COUNT + LAB_COUNT]),
    })
}
