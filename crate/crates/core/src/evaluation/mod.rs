//! Cross-validated CML/LML/FL comparison.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod splits;

pub use experiment::{run_arm, run_experiment_matrix, run_with_plan, ArmOutput, ExperimentConfig, Score};
pub use metrics::{auprc, f1_score, Confusion, F1_THRESHOLD};
pub use report::{mean_std, CellResult, ExperimentReport};
pub use splits::{stratified_kfold, stratified_split, Approach, FoldSplit, SplitPlan, VALIDATION_FRACTION};

#[cfg(test)]
mod tests;
