//! Federated ICU mortality modelling.
//!
//! The crate covers the whole simulation: synthetic cohorts of irregular
//! clinical time series ([`cohort`]), windowed feature extraction
//! ([`pipeline`]), four dual-channel sequential classifiers built on a small
//! hand-differentiated compute kernel ([`numeric`], [`model`]), centralized
//! and local training ([`trainer`]), FedAvg ([`federation`]) and the
//! cross-validated CML/LML/FL comparison ([`evaluation`]).

pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod seed;
pub mod trainer;

pub use cohort::{generate, partition_clients, ClientCohort, CohortConfig};
pub use error::{Error, Result};
pub use evaluation::{auprc, f1_score, run_experiment_matrix, ExperimentConfig, ExperimentReport, SplitPlan};
pub use federation::{fedavg_aggregate, run_federation, FederatedClient, FederationConfig, LocalClient};
pub use model::{build_architecture, init_parameters, ArchitectureSpec, Batch, Family, Model};
pub use numeric::{ClassWeights, Mode, ParamKind, ParameterSet, Tensor};
pub use pipeline::{NormalizationStats, PatientRecord, WindowedSample};
pub use trainer::{compute_class_weights, train, TrainConfig, TrainOutcome, Trainer};
