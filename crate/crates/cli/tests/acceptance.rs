//! Acceptance criteria. Runs as a plain binary (no libtest harness) so every
//! criterion prints one PASS/FAIL line. Pass a substring to run a subset,
//! e.g. `cargo test --test acceptance -- metric`.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use fedicu_core::cohort::{generate, partition_clients, CohortConfig};
use fedicu_core::evaluation::{
    auprc, f1_score, run_experiment_matrix, stratified_kfold, stratified_split, Approach, ExperimentConfig, SplitPlan,
    F1_THRESHOLD, VALIDATION_FRACTION,
};
use fedicu_core::federation::{fedavg_aggregate, run_federation, FederatedClient, FederationConfig, LocalClient};
use fedicu_core::model::{Batch, Family, Model, LAB_BIN_HOURS, LAB_COUNT, SUPPORTED_WINDOWS, VITAL_COUNT};
use fedicu_core::numeric::{
    weighted_bce_loss, ClassWeights, LayerSpec, Mode, ParamKind, ParameterSet, RecurrentCell, Tensor,
};
use fedicu_core::pipeline::{
    build_sample, extract_window, impute, resample, Dataset, NormalizationStats, Observation, PatientRecord,
    VARIABLE_COUNT,
};
use fedicu_core::seed;
use fedicu_core::trainer::{compute_class_weights, train, TrainConfig, Trainer};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. Gradients

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;
const GRADIENT_SEEDS: u64 = 5;
/// Denominator floor. Central differences on an O(1) loss carry about
/// `ε·|L|/h ≈ 1e-11` of roundoff, so gradients far below this floor have no
/// resolvable relative error; for them the check is `|Δ| < 1e-10`.
const RELATIVE_FLOOR: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn layer_params(spec: &LayerSpec, rng: &mut impl Rng) -> Vec<Tensor> {
    spec.param_shapes()
        .into_iter()
        .map(|(name, shape, _)| {
            let mut t = random_tensor(rng, &shape, 0.3);
            match name {
                "gamma" => t.data_mut().iter_mut().for_each(|v| *v += 1.0),
                "running_var" => t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5),
                _ => {}
            }
            t
        })
        .collect()
}

/// `Σ r ⊙ layer(x)` for a fixed random projection `r`.
fn projected(spec: &LayerSpec, params: &[Tensor], x: &Tensor, r: &[f64]) -> f64 {
    let refs: Vec<&Tensor> = params.iter().collect();
    let (y, _) = spec.forward(&refs, x, Mode::Train).unwrap();
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Worst relative error over every trainable scalar and every input scalar.
fn layer_fd_error(spec: &LayerSpec, input_shape: &[usize], seed: u64) -> f64 {
    let mut rng = seed::rng(seed, &[0xFD]);
    let mut params = layer_params(spec, &mut rng);
    let mut x = random_tensor(&mut rng, input_shape, 1.0);
    let refs: Vec<&Tensor> = params.iter().collect();
    let (y, cache) = spec.forward(&refs, &x, Mode::Train).unwrap();
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let dx = spec.backward(&refs, &cache, &Tensor::new(y.shape().to_vec(), r.clone()).unwrap(), &mut grads).unwrap();
    let kinds: Vec<ParamKind> = spec.param_shapes().into_iter().map(|(_, _, k)| k).collect();

    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        if kinds[p] != ParamKind::Trainable {
            continue;
        }
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + FD_STEP;
            let up = projected(spec, &params, &x, &r);
            params[p].data_mut()[i] = orig - FD_STEP;
            let down = projected(spec, &params, &x, &r);
            params[p].data_mut()[i] = orig;
            worst = worst.max(relative_error((up - down) / (2.0 * FD_STEP), grads[p].data()[i]));
        }
    }
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let up = projected(spec, &params, &x, &r);
        x.data_mut()[i] = orig - FD_STEP;
        let down = projected(spec, &params, &x, &r);
        x.data_mut()[i] = orig;
        worst = worst.max(relative_error((up - down) / (2.0 * FD_STEP), dx.data()[i]));
    }
    worst
}

fn model_loss(model: &Model, params: &ParameterSet, batch: &Batch, labels: &[f64]) -> f64 {
    let pass = model.forward(params, batch, Mode::Train).unwrap();
    weighted_bce_loss(&pass.predictions, labels, ClassWeights { positive: 3.0, negative: 0.6 }).unwrap().0
}

/// Worst relative error over every trainable scalar of the full model.
fn model_fd_error(family: Family, window: usize, seed: u64) -> f64 {
    let model = Model::build(family, window).unwrap();
    let mut params = model.init_parameters(seed);
    let mut rng = seed::rng(seed, &[0xFE]);
    let batch = Batch {
        vitals: random_tensor(&mut rng, &[4, window, VITAL_COUNT], 1.5),
        labs: random_tensor(&mut rng, &[4, window / LAB_BIN_HOURS, LAB_COUNT], 1.5),
    };
    let labels = [1.0, 0.0, 1.0, 0.0];
    let pass = model.forward(&params, &batch, Mode::Train).unwrap();
    let (_, dloss) =
        weighted_bce_loss(&pass.predictions, &labels, ClassWeights { positive: 3.0, negative: 0.6 }).unwrap();
    let grads = model.backward(&params, &pass.cache, &dloss).unwrap();

    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        if params.kind(p) != ParamKind::Trainable {
            continue;
        }
        for i in 0..params.value(p).len() {
            let orig = params.value(p).data()[i];
            params.value_mut(p).data_mut()[i] = orig + FD_STEP;
            let up = model_loss(&model, &params, &batch, &labels);
            params.value_mut(p).data_mut()[i] = orig - FD_STEP;
            let down = model_loss(&model, &params, &batch, &labels);
            params.value_mut(p).data_mut()[i] = orig;
            worst = worst.max(relative_error((up - down) / (2.0 * FD_STEP), grads.get(p).unwrap().data()[i]));
        }
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let recurrent = |cell, return_sequences| LayerSpec::Recurrent { cell, inputs: 3, units: 4, return_sequences };
    let cases: Vec<(&str, LayerSpec, Vec<usize>)> = vec![
        ("dense", LayerSpec::Dense { inputs: 5, units: 4 }, vec![3, 5]),
        ("conv1d", LayerSpec::Conv1d { in_channels: 3, kernel_size: 3, filters: 4 }, vec![2, 6, 3]),
        ("frnn", recurrent(RecurrentCell::Frnn, true), vec![2, 5, 3]),
        ("frnn-last", recurrent(RecurrentCell::Frnn, false), vec![2, 5, 3]),
        ("lstm", recurrent(RecurrentCell::Lstm, true), vec![2, 5, 3]),
        ("lstm-last", recurrent(RecurrentCell::Lstm, false), vec![2, 5, 3]),
        ("gru", recurrent(RecurrentCell::Gru, true), vec![2, 5, 3]),
        ("gru-last", recurrent(RecurrentCell::Gru, false), vec![2, 5, 3]),
        ("batchnorm-train", LayerSpec::BatchNorm { features: 4 }, vec![6, 4]),
    ];
    let mut report = Vec::new();
    for (name, spec, shape) in &cases {
        let worst = (0..GRADIENT_SEEDS).map(|s| layer_fd_error(spec, shape, s)).fold(0.0, f64::max);
        ensure(worst < FD_TOLERANCE, || format!("{name}: max relative error {worst:.2e}"))?;
        report.push(format!("{name} {worst:.1e}"));
    }
    let worst = (0..GRADIENT_SEEDS).map(|s| model_fd_error(Family::Lstm, 8, s)).fold(0.0, f64::max);
    ensure(worst < FD_TOLERANCE, || format!("full LSTM model: max relative error {worst:.2e}"))?;
    report.push(format!("lstm-model {worst:.1e}"));
    Ok(format!("{} seeds; {}", GRADIENT_SEEDS, report.join(", ")))
}

// ---------------------------------------------------------------------------
// 2. FedAvg with one client equals centralized training

fn single_client_equivalence() -> Outcome {
    let records =
        generate(&CohortConfig { patients: 500, seed: 1, ..CohortConfig::default() }).map_err(|e| e.to_string())?;
    let cohorts = partition_clients(&records, 1, 0.0, 7).map_err(|e| e.to_string())?;
    let cohort = &cohorts[0];
    let pick = |idx: &[usize]| idx.iter().map(|&i| &records[i]).collect::<Vec<_>>();
    let (stats, raw) = NormalizationStats::fit(&pick(&cohort.train), 8).unwrap();
    let train_set = Dataset::from_samples(8, &stats.apply_all(&raw)).unwrap();
    let validation = Dataset::from_samples(8, &stats.transform(&pick(&cohort.validation)).unwrap()).unwrap();

    let model = Model::build(Family::Lstm, 8).unwrap();
    let init = model.init_parameters(11);
    let seed = 23;
    let lr = 0.01;

    // Round by round against epoch by epoch.
    let weights = compute_class_weights(train_set.labels()).unwrap();
    let mut cml = Trainer::new(&model, init.clone(), weights, seed).unwrap();
    let mut client = LocalClient::from_records(&model, cohort, &records, &init, seed).unwrap();
    let mut global = init.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        cml.run_epoch(&train_set, 64, lr).unwrap();
        let local = client.local_update(&global, 64, lr, 1).unwrap();
        global = fedavg_aggregate(&[&local], &[client.train_size()]).unwrap();
        worst = worst.max(global.max_abs_diff(cml.params()).unwrap());
    }
    let running_moved = (0..init.len())
        .filter(|&i| init.kind(i) == ParamKind::RunningStatistic)
        .any(|i| init.value(i) != global.value(i));
    ensure(running_moved, || "running statistics never changed".into())?;

    // Full drivers: no decay, patience equal to the budget.
    let out_cml = train(
        &model,
        &init,
        &train_set,
        &validation,
        &TrainConfig {
            max_epochs: 5,
            batch_size: 64,
            learning_rate: lr,
            decay_factor: 1.0,
            patience: 5,
            seed,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let mut clients = vec![LocalClient::from_records(&model, cohort, &records, &init, seed).unwrap()];
    let fl_cfg = FederationConfig {
        clients: 1,
        max_rounds: 5,
        batch_size: Some(64),
        learning_rate: lr,
        patience: 5,
        parallel: false,
        ..FederationConfig::default()
    };
    let out_fl = run_federation(&init, &mut clients, &fl_cfg).unwrap();
    let driver_diff = out_fl.params.max_abs_diff(&out_cml.params).unwrap();
    ensure(out_fl.best_round == out_cml.best_epoch, || {
        format!("best round {} vs best epoch {}", out_fl.best_round, out_cml.best_epoch)
    })?;
    worst = worst.max(driver_diff);
    for (r, e) in out_fl.history.iter().zip(&out_cml.history) {
        worst = worst.max((r.average_loss - e.val_loss).abs());
    }
    ensure(worst < 1e-9, || format!("max abs parameter difference {worst:.3e}"))?;
    Ok(format!("{} training samples, 5 rounds vs 5 epochs, max abs diff {worst:.1e}", train_set.len()))
}

// ---------------------------------------------------------------------------
// 3. Aggregation algebra

fn random_params(rng: &mut impl Rng, shapes: &[Vec<usize>], spread: f64) -> ParameterSet {
    let mut p = ParameterSet::new();
    for (i, s) in shapes.iter().enumerate() {
        let kind = if i % 3 == 2 { ParamKind::RunningStatistic } else { ParamKind::Trainable };
        p.push(format!("p{i}"), kind, random_tensor(rng, s, spread)).unwrap();
    }
    p
}

fn aggregation_algebra() -> Outcome {
    let mut rng = seed::rng(3, &[0xA66]);
    let model = Model::build(Family::Lstm, 8).unwrap();

    // Identical clients: the aggregate is bitwise the input.
    for k in 1..=8 {
        let w = model.init_parameters(k as u64);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..5000)).collect();
        let copies: Vec<&ParameterSet> = vec![&w; k];
        let agg = fedavg_aggregate(&copies, &sizes).unwrap();
        ensure(agg.to_bytes() == w.to_bytes(), || format!("fixed point broken for K={k}"))?;
    }

    // Weighted-mean oracle: Σ n_k w_k / Σ n_k, computed element by element.
    let mut oracle_worst: f64 = 0.0;
    for &k in &[2usize, 4, 8] {
        for _ in 0..20 {
            let sets: Vec<ParameterSet> = (0..k)
                .map(|i| {
                    let mut p = model.init_parameters(rng.random());
                    for e in 0..p.len() {
                        p.value_mut(e).data_mut().iter_mut().for_each(|v| *v += (i as f64) * 0.1);
                    }
                    p
                })
                .collect();
            let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..3000)).collect();
            let refs: Vec<&ParameterSet> = sets.iter().collect();
            let agg = fedavg_aggregate(&refs, &sizes).unwrap();
            let total: f64 = sizes.iter().map(|&n| n as f64).sum();
            for e in 0..agg.len() {
                for j in 0..agg.value(e).len() {
                    let mut acc = 0.0;
                    for (s, &n) in sets.iter().zip(&sizes) {
                        acc += n as f64 * s.value(e).data()[j];
                    }
                    oracle_worst = oracle_worst.max((acc / total - agg.value(e).data()[j]).abs());
                }
            }
        }
    }
    ensure(oracle_worst < 1e-12, || format!("oracle disagreement {oracle_worst:.3e}"))?;

    // Convexity on random small sets with extreme size ratios.
    let shapes = vec![vec![3], vec![2, 2], vec![4]];
    for trial in 0..1000 {
        let k = rng.random_range(1..=8);
        let spread = 10f64.powi(rng.random_range(-3..4));
        let sets: Vec<ParameterSet> = (0..k).map(|_| random_params(&mut rng, &shapes, spread)).collect();
        let sizes: Vec<usize> = (0..k).map(|_| 10usize.pow(rng.random_range(0..6)) * rng.random_range(1..10)).collect();
        let refs: Vec<&ParameterSet> = sets.iter().collect();
        let agg = fedavg_aggregate(&refs, &sizes).unwrap();
        for e in 0..agg.len() {
            for j in 0..agg.value(e).len() {
                let vals = sets.iter().map(|s| s.value(e).data()[j]);
                let lo = vals.clone().fold(f64::INFINITY, f64::min);
                let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                let v = agg.value(e).data()[j];
                ensure(lo <= v && v <= hi, || format!("trial {trial}: {v} outside [{lo}, {hi}]"))?;
            }
        }
    }
    Ok(format!("fixed point bitwise for K=1..8, oracle max diff {oracle_worst:.1e}, convexity 1000/1000"))
}

// ---------------------------------------------------------------------------
// 4. Metrics

/// Threshold sweep: for each distinct score, highest first, count the
/// samples at or above it from scratch and add `ΔR · P`.
fn auprc_oracle(scores: &[f64], labels: &[f64]) -> f64 {
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|&(&s, &y)| s >= t && y == 1.0).count();
        let fp = scores.iter().zip(labels).filter(|&(&s, &y)| s >= t && y == 0.0).count();
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

fn f1_oracle(scores: &[f64], labels: &[f64], threshold: f64) -> f64 {
    let mut m = [[0usize; 2]; 2];
    for (&s, &y) in scores.iter().zip(labels) {
        m[usize::from(s >= threshold)][y as usize] += 1;
    }
    let (tp, fp, fn_) = (m[1][1], m[1][0], m[0][1]);
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

fn metric_oracles() -> Outcome {
    let mut rng = seed::rng(4, &[0x3E7]);
    let mut ties = 0;
    let mut edges = 0;
    for case in 0..1000 {
        let n = rng.random_range(2..80);
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let scores: Vec<f64> = match case % 5 {
            0 => (0..n).map(|_| f64::from(rng.random_range(0..4u8)) / 4.0).collect(),
            1 => (0..n).map(|_| rng.random_range(0.5..1.0)).collect(),
            2 => (0..n).map(|_| rng.random_range(0.0..0.5)).collect(),
            3 => vec![F1_THRESHOLD; n],
            _ => (0..n).map(|_| rng.random::<f64>()).collect(),
        };
        let mut distinct = scores.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        ties += usize::from(distinct.len() < n);
        edges += usize::from(scores.iter().all(|&s| s >= F1_THRESHOLD) || scores.iter().all(|&s| s < F1_THRESHOLD));

        let got = auprc(&scores, &labels).unwrap();
        let want = auprc_oracle(&scores, &labels);
        ensure(got == want, || format!("case {case}: auprc {got} vs oracle {want}"))?;
        let got = f1_score(&scores, &labels, F1_THRESHOLD).unwrap();
        let want = f1_oracle(&scores, &labels, F1_THRESHOLD);
        ensure(got == want, || format!("case {case}: f1 {got} vs oracle {want}"))?;
    }

    // Constant scorer on a 9.75% positive label vector.
    let n = 19414;
    let pos = (0.0975 * n as f64).round() as usize;
    let labels: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i % 10 == 0 && i / 10 < pos))).collect();
    let prevalence = pos as f64 / n as f64;
    let constant = auprc(&vec![0.42; n], &labels).unwrap();
    ensure((constant - prevalence).abs() < 1e-12, || format!("constant scorer {constant} vs prevalence {prevalence}"))?;
    ensure((prevalence - 0.0975).abs() < 5e-5, || format!("prevalence {prevalence}"))?;
    Ok(format!(
        "1000 instances exact ({ties} with ties, {edges} one-sided predictions); constant scorer {constant:.6} = prevalence"
    ))
}

// ---------------------------------------------------------------------------
// 5. Split protocol

fn positive_fraction(idx: &[usize], labels: &[u8]) -> f64 {
    idx.iter().filter(|&&i| labels[i] == 1).count() as f64 / idx.len() as f64
}

fn split_protocol() -> Outcome {
    let n = 19414;
    let pos = (0.0975 * n as f64).round() as usize;
    let mut rng = seed::rng(5, &[0x5]);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < pos)).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let target = pos as f64 / n as f64;

    let folds = stratified_kfold(&labels, 5, 1).unwrap();
    let mut counts = [0usize; 5];
    for (i, &f) in folds.iter().enumerate() {
        counts[f] += usize::from(labels[i] == 1);
    }
    ensure(counts.iter().all(|c| (378..=379).contains(c)), || format!("fold positives {counts:?}"))?;

    let mut worst_pp: f64 = 0.0;
    let mut check = |a: &[usize], b: &[usize], what: String| -> Result<(), String> {
        for part in [a, b] {
            let d = (positive_fraction(part, &labels) - target).abs() * 100.0;
            worst_pp = worst_pp.max(d);
            ensure(d <= 0.5, || format!("{what}: positive fraction off by {d:.3} pp"))?;
        }
        Ok(())
    };
    for f in 0..5 {
        let pool: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let (tr, va) = stratified_split(&pool, &labels, VALIDATION_FRACTION, f as u64);
        let expected = (VALIDATION_FRACTION * pool.len() as f64).round() as isize;
        ensure((va.len() as isize - expected).abs() <= 1, || format!("fold {f}: {} held out", va.len()))?;
        check(&tr, &va, format!("fold {f} 85/15"))?;
    }

    let clients = [2, 4, 8];
    let plan = SplitPlan::build(&labels, 5, &clients, 0.0, 1).unwrap();
    for split in &plan.splits {
        check(&split.cml_train, &split.cml_validation, format!("fold {} CML", split.fold))?;
        for (k, shards) in &split.clients {
            for c in shards {
                check(&c.train, &c.validation, format!("fold {} K={k} client {}", split.fold, c.id))?;
            }
        }
    }

    // Test folds: same bytes for every arm, and unaffected by which client
    // counts the plan was built for.
    let other = SplitPlan::build(&labels, 5, &[8], 0.0, 1).unwrap();
    let bytes = |idx: &[usize]| idx.iter().flat_map(|i| (*i as u64).to_le_bytes()).collect::<Vec<u8>>();
    for f in 0..5 {
        let reference = bytes(plan.test_set(f, Approach::Cml));
        for &k in &clients {
            for arm in [Approach::Lml(k), Approach::Fl(k)] {
                ensure(bytes(plan.test_set(f, arm)) == reference, || {
                    format!("fold {f}: {} test set differs", arm.label())
                })?;
            }
        }
        ensure(bytes(other.test_set(f, Approach::Fl(8))) == reference, || {
            format!("fold {f}: plan-dependent test set")
        })?;
    }
    Ok(format!("fold positives {counts:?}; worst 85/15 deviation {worst_pp:.3} pp; test folds identical"))
}

// ---------------------------------------------------------------------------
// 6 and 7. End-to-end learnability and the FL/LML trend

fn desk_cohort() -> Vec<PatientRecord> {
    generate(&CohortConfig { patients: 2000, seed: 1, ..CohortConfig::default() }).unwrap()
}

fn cell_mean(report: &fedicu_core::ExperimentReport, approach: Approach) -> Result<(f64, usize), String> {
    let cell = report.cell(approach, Family::Lstm, 8).ok_or_else(|| format!("no {} cell", approach.label()))?;
    if let Some(f) = &cell.failure {
        return Err(format!("{} failed: {f}", approach.label()));
    }
    Ok((cell.auprc.iter().sum::<f64>() / cell.auprc.len() as f64, cell.auprc.len()))
}

fn learnability() -> Outcome {
    let records = desk_cohort();
    let config = ExperimentConfig { clients: vec![4], lml: false, seed: 1, ..ExperimentConfig::default() };
    let start = Instant::now();
    let report = run_experiment_matrix(&records, &config).map_err(|e| e.to_string())?;
    let (cml, _) = cell_mean(&report, Approach::Cml)?;
    let (fl, _) = cell_mean(&report, Approach::Fl(4))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(cml >= 0.60 && fl >= 0.60, || format!("CML {cml:.4}, FL4 {fl:.4} (need ≥ 0.60)"))?;
    ensure(secs < 1200.0, || format!("took {secs:.0}s"))?;
    Ok(format!("5-fold mean AUPRC CML {cml:.4}, FL4 {fl:.4} (baseline 0.0975), {secs:.0}s"))
}

fn federated_beats_local() -> Outcome {
    let records = desk_cohort();
    let mut lines = Vec::new();
    let mut wins = 0;
    for s in 1..=3u64 {
        let config = ExperimentConfig { clients: vec![8], cml: false, seed: s, ..ExperimentConfig::default() };
        let report = run_experiment_matrix(&records, &config).map_err(|e| e.to_string())?;
        let (fl, _) = cell_mean(&report, Approach::Fl(8))?;
        let (lml, models) = cell_mean(&report, Approach::Lml(8))?;
        ensure(models == 40, || format!("seed {s}: {models} LML models"))?;
        ensure(fl >= lml - 0.02, || format!("seed {s}: FL8 {fl:.4} < LML8 {lml:.4} - 0.02"))?;
        wins += usize::from(fl >= lml);
        lines.push(format!("seed {s} FL8 {fl:.4} vs LML8 {lml:.4}"));
    }
    ensure(wins >= 2, || format!("FL8 ≥ LML8 on only {wins} of 3 seeds: {}", lines.join("; ")))?;
    Ok(format!("{}; FL ahead on {wins}/3", lines.join("; ")))
}

// ---------------------------------------------------------------------------
// 8. CLI determinism

fn fedicu(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out =
        Command::new(env!("CARGO_BIN_EXE_fedicu")).current_dir(cwd).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("fedicu {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn cli_determinism() -> Outcome {
    let small = ["--seed", "3", "--jobs", "1", "--max-epochs", "3", "--max-rounds", "3", "--patience", "2"];
    // Relative paths, so both runs see identical arguments.
    let run_all = |root: &Path| -> Result<(), String> {
        fedicu(root, &["generate", "--patients", "300", "--seed", "3", "--jobs", "1", "--out", "data"])?;
        let with = |cmd: &str, out: &str, extra: &[&str]| {
            let mut args = vec![cmd, "--data", "data", "--out", out];
            args.extend_from_slice(&small);
            args.extend_from_slice(extra);
            fedicu(root, &args)
        };
        with("train", "cml", &[])?;
        with("train", "lml", &["--approach", "lml", "--clients", "2"])?;
        with("federate", "fl", &["--clients", "2"])?;
        with("matrix", "matrix", &["--clients", "2", "--folds", "2"])?;
        fedicu(root, &["report", "matrix/report.csv", "--out", "rendered.md"])
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_all(a.path())?;
    run_all(b.path())?;
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    ensure(sa.keys().eq(sb.keys()), || "runs wrote different file sets".into())?;
    let differing: Vec<&String> = sa.iter().filter(|(k, v)| sb[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), || format!("files differ: {differing:?}"))?;
    for required in ["cml/model.bin", "fl/checkpoint.bin", "matrix/report.csv", "matrix/report.md", "rendered.md"] {
        ensure(sa.contains_key(required), || format!("{required} missing"))?;
    }
    Ok(format!("{} files byte-identical across repeated generate/train/federate/matrix/report runs", sa.len()))
}

// ---------------------------------------------------------------------------
// 9. Pipeline laws

/// Sparse record mixing quarter-hour event times, which often sit exactly on
/// bin edges, with continuous ones.
fn sparse_record(rng: &mut impl Rng, id: usize) -> PatientRecord {
    let span = rng.random_range(10..120) as f64;
    let series: Vec<Vec<Observation>> = (0..VARIABLE_COUNT)
        .map(|v| {
            let events = if rng.random_bool(0.35) { 0 } else { rng.random_range(1..12) };
            (0..events)
                .map(|_| {
                    let t = if rng.random_bool(0.5) {
                        f64::from(rng.random_range(0..(span as u32) * 4)) / 4.0
                    } else {
                        rng.random_range(0.01..span)
                    };
                    Observation::new(t, rng.random_range(-5.0..5.0) + v as f64)
                })
                .collect()
        })
        .collect();
    let mut series = series;
    if series.iter().all(Vec::is_empty) {
        series[0].push(Observation::new(span, 1.0));
    }
    PatientRecord::new(format!("r{id}"), u8::from(id.is_multiple_of(7)), series).unwrap()
}

/// `x` as an exact multiple of 2^-80. Every time used here is either 0 or
/// at least 2^-28, so no bits are lost.
fn fixed(x: f64) -> i128 {
    if x == 0.0 {
        return 0;
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32 - 1075;
    let mantissa = ((bits & ((1 << 52) - 1)) | (1 << 52)) as i128;
    let shift = exp + 80;
    assert!(shift >= 0, "{x} is below the fixed-point resolution");
    let v = mantissa << shift;
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Bin `b` of width `d` covers `(anchor − W + b·d, anchor − W + (b+1)·d]` in
/// exact arithmetic; its value is the mean of the events inside, or `None`.
fn binning_oracle(record: &PatientRecord, vars: std::ops::Range<usize>, window: usize, d: usize) -> Vec<Option<f64>> {
    let hour = 1i128 << 80;
    let start = fixed(record.anchor()) - window as i128 * hour;
    let mut out = Vec::new();
    for b in 0..window / d {
        let lo = start + (b * d) as i128 * hour;
        let hi = start + ((b + 1) * d) as i128 * hour;
        for v in vars.clone() {
            let inside: Vec<f64> = record
                .series(v)
                .iter()
                .filter(|o| fixed(o.time) > lo && fixed(o.time) <= hi)
                .map(|o| o.value)
                .collect();
            out.push((!inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64));
        }
    }
    out
}

fn pipeline_laws() -> Outcome {
    let mut rng = seed::rng(9, &[0x91BE]);
    let records: Vec<PatientRecord> = (0..1000).map(|i| sparse_record(&mut rng, i)).collect();
    let means: Vec<f64> = (0..VARIABLE_COUNT).map(|v| v as f64 * 10.0 + 0.5).collect();
    let mut gaps = 0;
    for &w in &SUPPORTED_WINDOWS {
        for r in &records {
            let (vitals, labs) = resample(&extract_window(r, w).unwrap());
            ensure(vitals.cells == binning_oracle(r, 0..VITAL_COUNT, w, 1), || {
                format!("W={w} {}: vital bins differ", r.id())
            })?;
            ensure(labs.cells == binning_oracle(r, VITAL_COUNT..VARIABLE_COUNT, w, LAB_BIN_HOURS), || {
                format!("W={w} {}: lab bins differ", r.id())
            })?;
            gaps += vitals.missing() + labs.missing();
            for (m, col_means) in [(&vitals, &means[..VITAL_COUNT]), (&labs, &means[VITAL_COUNT..])] {
                let filled = impute(m, col_means);
                ensure(filled.len() == m.rows * m.cols && filled.iter().all(|v| v.is_finite()), || {
                    format!("W={w} {}: imputation left gaps", r.id())
                })?;
                for (c, f) in m.cells.iter().zip(&filled) {
                    ensure(c.is_none_or(|v| v == *f), || format!("W={w} {}: observed cell changed", r.id()))?;
                }
            }
            let s = build_sample(r, w, &means).unwrap();
            ensure(s.vital_rows() == w && s.vitals.len() == w * VITAL_COUNT, || {
                format!("W={w}: {} vital rows", s.vital_rows())
            })?;
            ensure(s.lab_rows() == w / LAB_BIN_HOURS && s.labs.len() == (w / LAB_BIN_HOURS) * LAB_COUNT, || {
                format!("W={w}: {} lab rows", s.lab_rows())
            })?;
            ensure(s.is_finite(), || format!("W={w} {}: non-finite sample", r.id()))?;
        }
    }
    Ok(format!("W ∈ {SUPPORTED_WINDOWS:?}, 1000 records each, {gaps} gaps filled, binning matches oracle"))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_correctness),
        ("fedavg-cml equivalence", single_client_equivalence),
        ("aggregation algebra", aggregation_algebra),
        ("metric oracles", metric_oracles),
        ("split protocol", split_protocol),
        ("end-to-end learnability", learnability),
        ("fl vs lml trend", federated_beats_local),
        ("cli determinism", cli_determinism),
        ("pipeline laws", pipeline_laws),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
