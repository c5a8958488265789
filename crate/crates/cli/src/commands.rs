use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fedicu_core::cohort::generate as generate_cohort;
use fedicu_core::evaluation::{run_arm, run_experiment_matrix, Approach, ArmOutput, ExperimentReport, SplitPlan};
use fedicu_core::federation::write_round_history;
use fedicu_core::pipeline::{read_cohort_dir, write_cohort_dir, PatientRecord};
use fedicu_core::trainer::write_history;

use crate::config::{Layers, Settings, SNAPSHOT_FILE};

fn prepare_out(out: &Path, layers: &Layers) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(SNAPSHOT_FILE), layers.snapshot())?;
    Ok(())
}

/// Reads the configured cohort directory, or generates the cohort in memory.
fn load_records(s: &Settings) -> Result<Vec<PatientRecord>> {
    match &s.data {
        Some(dir) => read_cohort_dir(dir).with_context(|| format!("reading cohort from {}", dir.display())),
        None => Ok(generate_cohort(&s.cohort)?),
    }
}

fn write_scores(path: &Path, arm: &ArmOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "auprc", "f1"])?;
    for (i, sc) in arm.scores.iter().enumerate() {
        w.write_record([i.to_string(), sc.auprc.to_string(), sc.f1.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn single_arm(s: &Settings, approach: Approach) -> Result<ArmOutput> {
    let records = load_records(s)?;
    let labels: Vec<u8> = records.iter().map(PatientRecord::label).collect();
    let clients: Vec<usize> = match approach {
        Approach::Cml => Vec::new(),
        Approach::Lml(k) | Approach::Fl(k) => vec![k],
    };
    let plan = SplitPlan::build(&labels, s.experiment.folds, &clients, s.experiment.skew, s.seed)?;
    Ok(run_arm(&records, &plan, s.fold, s.family(), s.window(), approach, &s.experiment)?)
}

pub fn generate(layers: &Layers, s: &Settings, out: &Path) -> Result<()> {
    let records = generate_cohort(&s.cohort)?;
    prepare_out(out, layers)?;
    write_cohort_dir(&records, out)?;
    let positives = records.iter().filter(|r| r.label() == 1).count();
    println!("wrote {} patients ({positives} positive) to {}", records.len(), out.display());
    Ok(())
}

pub fn train(layers: &Layers, s: &Settings, out: &Path) -> Result<()> {
    let approach = s.train_approach()?;
    let arm = single_arm(s, approach)?;
    prepare_out(out, layers)?;
    let single = approach == Approach::Cml;
    for (i, (outcome, params)) in arm.training.iter().zip(&arm.models).enumerate() {
        let suffix = if single { String::new() } else { format!("_client{i}") };
        write_history(&out.join(format!("history{suffix}.csv")), &outcome.history)?;
        fs::write(out.join(format!("model{suffix}.bin")), params.to_bytes())?;
    }
    write_scores(&out.join("scores.csv"), &arm)?;
    for (i, sc) in arm.scores.iter().enumerate() {
        println!("{} model {i}: auprc {:.4} f1 {:.4}", approach.label(), sc.auprc, sc.f1);
    }
    Ok(())
}

pub fn federate(layers: &Layers, s: &Settings, out: &Path) -> Result<()> {
    let approach = Approach::Fl(s.clients()?);
    let arm = single_arm(s, approach)?;
    prepare_out(out, layers)?;
    let fed = arm.federation.as_ref().expect("FL arms carry a federation outcome");
    write_round_history(&out.join("rounds.csv"), &fed.history)?;
    fs::write(out.join("checkpoint.bin"), fed.params.to_bytes())?;
    write_scores(&out.join("scores.csv"), &arm)?;
    println!(
        "{}: best round {} of {}, auprc {:.4} f1 {:.4}",
        approach.label(),
        fed.best_round,
        fed.history.len(),
        arm.scores[0].auprc,
        arm.scores[0].f1
    );
    Ok(())
}

pub fn matrix(layers: &Layers, s: &Settings, out: &Path) -> Result<()> {
    let records = load_records(s)?;
    let report = run_experiment_matrix(&records, &s.experiment)?;
    prepare_out(out, layers)?;
    fs::write(out.join("report.csv"), report.to_csv_string())?;
    let md = report.to_markdown();
    fs::write(out.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

pub fn report(input: &Path, out: Option<&Path>) -> Result<()> {
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let md = ExperimentReport::read_csv(file)?.to_markdown();
    if let Some(path) = out {
        fs::write(path, &md)?;
    }
    print!("{md}");
    Ok(())
}
