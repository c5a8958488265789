use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::Layers;

/// Federated ICU mortality simulation.
#[derive(Parser, Debug)]
#[command(name = "fedicu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort (events.csv, labels.csv).
    Generate(RunArgs),
    /// Train one CML model or K LML models on one fold.
    Train(RunArgs),
    /// Run FedAvg on one fold and keep the best global model.
    Federate(RunArgs),
    /// Cross-validate every selected approach, family and window.
    Matrix(RunArgs),
    /// Render a report CSV as a markdown table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Cohort directory; a cohort is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated: 1dcnn, frnn, lstm, gru.
    #[arg(long)]
    families: Option<String>,
    /// Comma-separated window lengths in hours.
    #[arg(long)]
    windows: Option<String>,
    /// Comma-separated client counts.
    #[arg(long)]
    clients: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Fold used by train and federate.
    #[arg(long)]
    fold: Option<usize>,
    /// cml or lml for train; comma-separated subset of cml,lml,fl for matrix.
    #[arg(long)]
    approach: Option<String>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    positive_fraction: Option<f64>,
    #[arg(long)]
    skew: Option<f64>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Disable learning-rate decay.
    #[arg(long)]
    fixed_lr: bool,
    /// Extra key=value overrides, applied before the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report CSV written by `matrix`.
    input: PathBuf,
    /// Also write the markdown here.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn layers(&self, matrix: bool) -> anyhow::Result<Layers> {
        let mut layers = Layers::default();
        if let Some(path) = &self.config {
            layers.apply_file(path)?;
        }
        for pair in &self.overrides {
            layers.assign(pair)?;
        }
        let approach_key = [if matrix { "experiment.approaches" } else { "experiment.approach" }];
        let flags: Vec<(&[&str], Option<String>)> = vec![
            (&["data"], self.data.as_ref().map(|p| p.display().to_string())),
            (&["seed"], self.seed.map(|v| v.to_string())),
            (&["jobs"], self.jobs.map(|v| v.to_string())),
            (&["experiment.families"], self.families.clone()),
            (&["experiment.windows"], self.windows.clone()),
            (&["experiment.clients"], self.clients.clone()),
            (&["experiment.folds"], self.folds.map(|v| v.to_string())),
            (&["experiment.fold"], self.fold.map(|v| v.to_string())),
            (&approach_key, self.approach.clone()),
            (&["cohort.patients"], self.patients.map(|v| v.to_string())),
            (&["cohort.positive_fraction"], self.positive_fraction.map(|v| v.to_string())),
            (&["cohort.skew"], self.skew.map(|v| v.to_string())),
            (&["cohort.signal_strength"], self.signal.map(|v| v.to_string())),
            (&["train.batch"], self.batch.map(|v| v.to_string())),
            (&["train.lr", "federation.lr"], self.lr.map(|v| v.to_string())),
            (&["train.patience", "federation.patience"], self.patience.map(|v| v.to_string())),
            (&["train.max_epochs"], self.max_epochs.map(|v| v.to_string())),
            (&["federation.max_rounds"], self.max_rounds.map(|v| v.to_string())),
            (&["train.fixed_lr"], self.fixed_lr.then(|| "true".to_string())),
        ];
        for (keys, value) in flags {
            if let Some(v) = value {
                for key in keys {
                    layers.set(key, &v)?;
                }
            }
        }
        Ok(layers)
    }
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (args, matrix) = match &cli.command {
        Command::Report(r) => return commands::report(&r.input, r.out.as_deref()).map_err(Failure::Runtime),
        Command::Matrix(a) => (a, true),
        Command::Generate(a) | Command::Train(a) | Command::Federate(a) => (a, false),
    };
    let layers = args.layers(matrix).map_err(Failure::Usage)?;
    let settings = layers.settings().map_err(Failure::Usage)?;
    let out = &args.out;
    let result = match &cli.command {
        Command::Generate(_) => commands::generate(&layers, &settings, out),
        Command::Train(_) => commands::train(&layers, &settings, out),
        Command::Federate(_) => commands::federate(&layers, &settings, out),
        Command::Matrix(_) => commands::matrix(&layers, &settings, out),
        Command::Report(_) => unreachable!(),
    };
    result.map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDICU_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
