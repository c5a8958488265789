//! Aggregated experiment results: CSV for storage, markdown for reading.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use super::splits::Approach;
use crate::error::{Error, Result};
use crate::model::Family;

const HEADER: [&str; 10] =
    ["approach", "family", "window", "clients", "metric", "mean", "std", "models", "values", "status"];

/// Scores of every model of one (approach, family, window) cell, ordered by
/// fold and then client id.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub approach: Approach,
    pub family: Family,
    pub window: usize,
    pub auprc: Vec<f64>,
    pub f1: Vec<f64>,
    /// Set when any run of the cell failed; scores are then empty.
    pub failure: Option<String>,
}

impl CellResult {
    fn key(&self) -> (usize, Approach, usize) {
        (self.window, self.approach, Family::ALL.iter().position(|&f| f == self.family).unwrap_or(usize::MAX))
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let parse_k = |rest: &str| {
            rest.parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::format(format!("bad client count in approach `{s}`")))
        };
        if upper == "CML" {
            Ok(Approach::Cml)
        } else if let Some(rest) = upper.strip_prefix("LML") {
            Ok(Approach::Lml(parse_k(rest)?))
        } else if let Some(rest) = upper.strip_prefix("FL") {
            Ok(Approach::Fl(parse_k(rest)?))
        } else {
            Err(Error::format(format!("unknown approach `{s}`")))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    cells: Vec<CellResult>,
}

impl ExperimentReport {
    /// Cells are kept sorted by window, approach and family, so the report
    /// does not depend on the order results arrive in.
    pub fn new(mut cells: Vec<CellResult>) -> Self {
        cells.sort_by_key(CellResult::key);
        Self { cells }
    }

    pub fn cells(&self) -> &[CellResult] {
        &self.cells
    }

    pub fn cell(&self, approach: Approach, family: Family, window: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.approach == approach && c.family == family && c.window == window)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for c in &self.cells {
            for (metric, values) in [("auprc", &c.auprc), ("f1", &c.f1)] {
                let (mean, std) =
                    mean_std(values).map_or((String::new(), String::new()), |(m, s)| (m.to_string(), s.to_string()));
                let joined = values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
                let status = c.failure.as_ref().map_or("ok".to_string(), |f| format!("failed: {f}"));
                w.write_record([
                    c.approach.label(),
                    c.family.as_str().to_string(),
                    c.window.to_string(),
                    c.approach.clients().to_string(),
                    metric.to_string(),
                    mean,
                    std,
                    values.len().to_string(),
                    joined,
                    status,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::format(format!("report header must be {}", HEADER.join(","))));
        }
        let mut cells: Vec<CellResult> = Vec::new();
        for (line, row) in r.records().enumerate() {
            let row = row?;
            let bad = |what: &str| Error::format(format!("report row {}: bad {what}", line + 2));
            let approach: Approach = row[0].parse()?;
            let family: Family = row[1].parse().map_err(|_| bad("family"))?;
            let window: usize = row[2].parse().map_err(|_| bad("window"))?;
            let values = row[8]
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<Vec<_>>>()?;
            let failure = match &row[9] {
                "ok" => None,
                s => Some(s.strip_prefix("failed: ").ok_or_else(|| bad("status"))?.to_string()),
            };
            let idx =
                match cells.iter().position(|c| c.approach == approach && c.family == family && c.window == window) {
                    Some(i) => i,
                    None => {
                        cells.push(CellResult { approach, family, window, auprc: Vec::new(), f1: Vec::new(), failure });
                        cells.len() - 1
                    }
                };
            match &row[4] {
                "auprc" => cells[idx].auprc = values,
                "f1" => cells[idx].f1 = values,
                _ => return Err(bad("metric")),
            }
        }
        Ok(Self::new(cells))
    }

    /// One block per window, one row per approach, AUPRC then F1 columns
    /// per family, each cell `mean ± std`.
    pub fn to_markdown(&self) -> String {
        let mut families: Vec<Family> =
            Family::ALL.into_iter().filter(|f| self.cells.iter().any(|c| c.family == *f)).collect();
        families.dedup();
        let mut windows: Vec<usize> = self.cells.iter().map(|c| c.window).collect();
        windows.dedup();
        let mut out = String::new();
        let names: Vec<&str> = families.iter().map(|f| f.display_name()).collect();
        let _ = writeln!(
            out,
            "| | {} | {} |",
            names.iter().map(|n| format!("AUPRC {n}")).collect::<Vec<_>>().join(" | "),
            names.iter().map(|n| format!("F1 {n}")).collect::<Vec<_>>().join(" | ")
        );
        let _ = writeln!(out, "|---|{}", "---|".repeat(2 * families.len()));
        for &w in &windows {
            let _ = writeln!(out, "| **{w}h** |{}", " |".repeat(2 * families.len()));
            let mut approaches: Vec<Approach> =
                self.cells.iter().filter(|c| c.window == w).map(|c| c.approach).collect();
            approaches.sort();
            approaches.dedup();
            for a in approaches {
                let mut row = format!("| {} |", a.label());
                for metric in 0..2 {
                    for &f in &families {
                        let text = match self.cell(a, f, w) {
                            None => "n/a".to_string(),
                            Some(c) if c.failure.is_some() => "failed".to_string(),
                            Some(c) => {
                                let values = if metric == 0 { &c.auprc } else { &c.f1 };
                                mean_std(values).map_or("n/a".to_string(), |(m, s)| format!("{m:.2} ± {s:.2}"))
                            }
                        };
                        let _ = write!(row, " {text} |");
                    }
                }
                let _ = writeln!(out, "{row}");
            }
        }
        out
    }
}
