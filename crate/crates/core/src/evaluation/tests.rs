use super::*;
use crate::cohort::{generate, CohortConfig};
use crate::federation::FederationConfig;
use crate::model::Family;
use crate::pipeline::PatientRecord;
use crate::trainer::TrainConfig;

fn cohort(n: usize, seed: u64) -> Vec<PatientRecord> {
    generate(&CohortConfig { patients: n, seed, positive_fraction: 0.15, ..CohortConfig::default() }).unwrap()
}

fn tiny(clients: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig {
        clients,
        seed: 3,
        train: TrainConfig { max_epochs: 2, patience: 2, batch_size: 32, ..TrainConfig::default() },
        federation: FederationConfig { max_rounds: 2, patience: 2, ..FederationConfig::default() },
        ..ExperimentConfig::default()
    }
}

#[test]
fn matrix_bookkeeping() {
    let records = cohort(300, 1);
    let report = run_experiment_matrix(&records, &tiny(vec![2])).unwrap();
    let labels: Vec<String> = report.cells().iter().map(|c| c.approach.label()).collect();
    assert_eq!(labels, ["CML", "LML2", "FL2"]);
    let sizes: Vec<usize> = report.cells().iter().map(|c| c.auprc.len()).collect();
    assert_eq!(sizes, [5, 10, 5]);
    for c in report.cells() {
        assert!(c.failure.is_none());
        assert_eq!(c.f1.len(), c.auprc.len());
        assert!(c.auprc.iter().chain(&c.f1).all(|v| (0.0..=1.0).contains(v)));
    }
    let csv = report.to_csv_string();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}

#[test]
fn matrix_is_deterministic() {
    let records = cohort(200, 2);
    let cfg = ExperimentConfig { folds: 3, ..tiny(vec![2]) };
    let a = run_experiment_matrix(&records, &cfg).unwrap().to_csv_string();
    let b = run_experiment_matrix(&records, &cfg).unwrap().to_csv_string();
    assert_eq!(a, b);
    let parallel = run_experiment_matrix(&records, &ExperimentConfig { jobs: 4, ..cfg }).unwrap().to_csv_string();
    assert_eq!(a, parallel);
}

#[test]
fn failed_cells_are_marked_and_the_rest_continue() {
    let records = cohort(200, 4);
    let labels: Vec<u8> = records.iter().map(PatientRecord::label).collect();
    let plan = SplitPlan::build(&labels, 2, &[2], 0.0, 3).unwrap();
    let cfg = ExperimentConfig { folds: 2, ..tiny(vec![2, 3]) };
    let report = run_with_plan(&records, &plan, &cfg).unwrap();
    for c in report.cells() {
        match c.approach {
            Approach::Lml(3) | Approach::Fl(3) => {
                assert!(c.failure.as_deref().unwrap().contains("3-client"));
                assert!(c.auprc.is_empty());
            }
            _ => assert!(c.failure.is_none(), "{:?}", c.approach),
        }
    }
    assert!(report.to_markdown().contains("| LML3 | failed | failed |"));
}

#[test]
fn arms_share_test_fold_and_initialization() {
    let records = cohort(200, 5);
    let labels: Vec<u8> = records.iter().map(PatientRecord::label).collect();
    let plan = SplitPlan::build(&labels, 5, &[2, 4], 0.0, 9).unwrap();
    for f in 0..5 {
        let t = plan.test_set(f, Approach::Cml);
        assert_eq!(t, plan.test_set(f, Approach::Lml(2)));
        assert_eq!(t, plan.test_set(f, Approach::Fl(4)));
        let split = &plan.splits[f];
        // Training pools never touch the test fold.
        let pools = split.cml_train.iter().chain(&split.cml_validation);
        let shards = split.clients.values().flatten().flat_map(|c| c.members().collect::<Vec<_>>());
        for i in pools.copied().chain(shards) {
            assert!(!t.contains(&i));
        }
    }
    let cfg = tiny(vec![2]);
    assert_eq!(cfg.init_seed(0), cfg.init_seed(0));
    assert_ne!(cfg.init_seed(0), cfg.init_seed(1));
}

#[test]
fn lml_models_are_scored_on_the_full_test_fold() {
    let records = cohort(200, 6);
    let labels: Vec<u8> = records.iter().map(PatientRecord::label).collect();
    let plan = SplitPlan::build(&labels, 5, &[4], 0.0, 1).unwrap();
    let out = run_arm(&records, &plan, 0, Family::Frnn, 8, Approach::Lml(4), &tiny(vec![4])).unwrap();
    assert_eq!(out.scores.len(), 4);
    assert_eq!(out.models.len(), 4);
    assert_eq!(out.training.len(), 4);
    let fl = run_arm(&records, &plan, 0, Family::Frnn, 8, Approach::Fl(4), &tiny(vec![4])).unwrap();
    assert_eq!(fl.scores.len(), 1);
    assert_eq!(fl.federation.unwrap().history[0].client_losses.len(), 4);
}

#[test]
fn config_checks() {
    let ok = tiny(vec![2]);
    assert!(ok.validate().is_ok());
    assert!(ExperimentConfig { windows: vec![12], ..ok.clone() }.validate().is_err());
    assert!(ExperimentConfig { cml: false, lml: false, fl: false, ..ok.clone() }.validate().is_err());
    assert!(ExperimentConfig { clients: vec![], ..ok.clone() }.validate().is_err());
    assert!(ExperimentConfig { jobs: 0, ..ok.clone() }.validate().is_err());
    assert_eq!(ok.client_batch(8), 4);
    assert_eq!(ExperimentConfig::default().client_batch(8), 8);
    assert_eq!(ExperimentConfig::default().client_batch(128), 1);
}
