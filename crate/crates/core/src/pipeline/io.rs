//! CSV cohort files.
//!
//! `events.csv`: `patient_id,variable_name,timestamp_hours,value`
//! `labels.csv`: `patient_id,label`
//!
//! Patients appear in `labels.csv` order. Every event must name a labelled
//! patient and one of the 23 known variables.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{variable_index, variable_name, Observation, PatientRecord, VARIABLE_COUNT};
use crate::error::{Error, Result};

pub const EVENTS_FILE: &str = "events.csv";
pub const LABELS_FILE: &str = "labels.csv";

pub fn write_cohort<E: Write, L: Write>(records: &[PatientRecord], events: E, labels: L) -> Result<()> {
    let mut lw = csv::Writer::from_writer(labels);
    lw.write_record(["patient_id", "label"])?;
    let mut ew = csv::Writer::from_writer(events);
    ew.write_record(["patient_id", "variable_name", "timestamp_hours", "value"])?;
    for r in records {
        lw.write_record([r.id(), &r.label().to_string()])?;
        for v in 0..VARIABLE_COUNT {
            for o in r.series(v) {
                ew.write_record([r.id(), variable_name(v), &o.time.to_string(), &o.value.to_string()])?;
            }
        }
    }
    lw.flush()?;
    ew.flush()?;
    Ok(())
}

pub fn read_cohort<E: Read, L: Read>(events: E, labels: L) -> Result<Vec<PatientRecord>> {
    let mut order: Vec<(String, u8)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut lr = csv::Reader::from_reader(labels);
    check_header(lr.headers()?, &["patient_id", "label"], LABELS_FILE)?;
    for (line, row) in lr.records().enumerate() {
        let row = row?;
        let id = field(&row, 0, LABELS_FILE, line)?.to_string();
        let label: u8 = field(&row, 1, LABELS_FILE, line)?
            .parse()
            .map_err(|_| Error::format(format!("{LABELS_FILE} row {}: bad label", line + 1)))?;
        if index.insert(id.clone(), order.len()).is_some() {
            return Err(Error::format(format!("{LABELS_FILE}: duplicate patient `{id}`")));
        }
        order.push((id, label));
    }

    let mut series: Vec<Vec<Vec<Observation>>> = vec![vec![Vec::new(); VARIABLE_COUNT]; order.len()];
    let mut er = csv::Reader::from_reader(events);
    check_header(er.headers()?, &["patient_id", "variable_name", "timestamp_hours", "value"], EVENTS_FILE)?;
    for (line, row) in er.records().enumerate() {
        let row = row?;
        let id = field(&row, 0, EVENTS_FILE, line)?;
        let &p = index
            .get(id)
            .ok_or_else(|| Error::format(format!("{EVENTS_FILE} row {}: unlabelled patient `{id}`", line + 1)))?;
        let name = field(&row, 1, EVENTS_FILE, line)?;
        let v = variable_index(name)
            .ok_or_else(|| Error::format(format!("{EVENTS_FILE} row {}: unknown variable `{name}`", line + 1)))?;
        let num = |i: usize| -> Result<f64> {
            field(&row, i, EVENTS_FILE, line)?
                .parse()
                .map_err(|_| Error::format(format!("{EVENTS_FILE} row {}: bad number in column {}", line + 1, i + 1)))
        };
        series[p][v].push(Observation::new(num(2)?, num(3)?));
    }

    order
        .into_iter()
        .zip(series)
        .map(|((id, label), s)| PatientRecord::new(id, label, s).map_err(|e| Error::format(e.to_string())))
        .collect()
}

fn check_header(found: &csv::StringRecord, expected: &[&str], file: &str) -> Result<()> {
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::format(format!("{file}: expected header {}", expected.join(","))));
    }
    Ok(())
}

fn field<'a>(row: &'a csv::StringRecord, i: usize, file: &str, line: usize) -> Result<&'a str> {
    row.get(i).map(str::trim).ok_or_else(|| Error::format(format!("{file} row {}: missing column {}", line + 1, i + 1)))
}

pub fn write_cohort_dir(records: &[PatientRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let events = BufWriter::new(File::create(dir.join(EVENTS_FILE))?);
    let labels = BufWriter::new(File::create(dir.join(LABELS_FILE))?);
    write_cohort(records, events, labels)
}

pub fn read_cohort_dir(dir: &Path) -> Result<Vec<PatientRecord>> {
    let events = BufReader::new(File::open(dir.join(EVENTS_FILE))?);
    let labels = BufReader::new(File::open(dir.join(LABELS_FILE))?);
    read_cohort(events, labels)
}
