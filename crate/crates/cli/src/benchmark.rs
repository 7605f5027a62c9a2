//! Baseline versus pre-sorted ensembles over repeats and a K sweep.

use std::time::Instant;

use pstm_core::bitdata::{self, BinaryDataset};
use pstm_core::ensemble::{train_baseline, verify_budgets, verify_partition};
use pstm_core::{evaluate, presort, EarlyStop, EnsemblePlan, PresortedEnsemble, TrainReport, TsetlinMachine};

use crate::config::{RepeatSeeds, RunConfig};
use crate::data::Loaded;
use crate::error::Result;
use crate::report::{self, BenchmarkReport, Metrics, Model, RunRecord, Status};

/// Stop-on set for the baseline, mirroring what the ensemble machines use.
pub fn baseline_stop<'a>(
    early_stop: EarlyStop,
    train: &'a BinaryDataset,
    test: &'a BinaryDataset,
) -> Option<&'a BinaryDataset> {
    match early_stop {
        EarlyStop::Off => None,
        EarlyStop::Train => Some(train),
        EarlyStop::Test if !test.is_empty() => Some(test),
        EarlyStop::Test => Some(train),
    }
}

pub fn run_baseline(cfg: &RunConfig, seeds: &RepeatSeeds, train: &BinaryDataset, test: &BinaryDataset) -> Result<Metrics> {
    let params = cfg.tm_params(seeds);
    let (tm, stats) = train_baseline(train, &params, baseline_stop(cfg.early_stop, train, test))?;
    let eval = evaluate(&tm, test)?;
    Ok(Metrics {
        accuracy: eval.accuracy,
        correct: eval.correct,
        test_points: eval.total,
        presort_s: 0.0,
        train_s: stats.wall_time_s,
        infer_s: eval.wall_time_s,
        clause_updates: stats.clause_updates,
        feedback_applied: stats.feedback_applied,
        clause_evaluations: eval.clause_evaluations,
        epochs_run: stats.epochs_run,
        early_stopped_machines: usize::from(stats.early_stopped),
        peak_resident_machines: 1,
        partition_sizes: vec![train.len()],
        budgets: vec![params.clauses_per_class],
        partition_exact: true,
        budgets_exact: true,
        digests: vec![tm.digest()],
    })
}

/// Trains with the configured mode and returns the machines for evaluation.
///
/// Sequential mode keeps only serialized bytes between machines, so at most
/// one machine is ever live during training.
pub fn train_ensemble(
    cfg: &RunConfig,
    plan: &EnsemblePlan,
    train: &BinaryDataset,
    test: &BinaryDataset,
) -> Result<(PresortedEnsemble, TrainReport)> {
    let opts = cfg.train_options();
    if !cfg.sequential {
        return Ok(plan.train_parallel(train, &opts, Some(test))?);
    }
    let mut stored = Vec::with_capacity(plan.k());
    let report = plan.train_sequential(train, &opts, Some(test), |_, tm| {
        stored.push(tm.to_bytes());
        Ok(())
    })?;
    let machines = stored
        .iter()
        .map(|b| TsetlinMachine::from_bytes(b))
        .collect::<pstm_core::Result<Vec<_>>>()?;
    Ok((
        PresortedEnsemble {
            layout: plan.layout.clone(),
            machines,
        },
        report,
    ))
}

pub fn run_presorted(
    cfg: &RunConfig,
    k: usize,
    seeds: &RepeatSeeds,
    train: &BinaryDataset,
    test: &BinaryDataset,
) -> Result<Metrics> {
    let start = Instant::now();
    let sorted = presort(train, &cfg.presort_config(k, seeds))?;
    let presort_s = start.elapsed().as_secs_f64();
    let plan = cfg.plan(&sorted, seeds)?;

    // every run re-checks the two conservation laws before training
    verify_partition(&plan.partitions, train.len())?;
    verify_budgets(&plan.layout.budgets, cfg.tm.clauses_per_class)?;

    let (ensemble, trained) = train_ensemble(cfg, &plan, train, test)?;
    let eval = evaluate(&ensemble, test)?;
    Ok(Metrics {
        accuracy: eval.accuracy,
        correct: eval.correct,
        test_points: eval.total,
        presort_s,
        train_s: trained.total.wall_time_s,
        infer_s: eval.wall_time_s,
        clause_updates: trained.total.clause_updates,
        feedback_applied: trained.total.feedback_applied,
        clause_evaluations: eval.clause_evaluations,
        epochs_run: trained.per_machine.iter().map(|s| s.epochs_run).max().unwrap_or(0),
        early_stopped_machines: trained.per_machine.iter().filter(|s| s.early_stopped).count(),
        peak_resident_machines: trained.peak_resident_machines,
        partition_sizes: plan.partitions.iter().map(Vec::len).collect(),
        budgets: plan.layout.budgets.clone(),
        partition_exact: true,
        budgets_exact: true,
        digests: trained.digests,
    })
}

fn record(model: Model, k: usize, repeat: usize, seeds: RepeatSeeds, result: Result<Metrics>) -> RunRecord {
    match result {
        Ok(m) => RunRecord {
            model,
            k,
            repeat,
            status: Status::Ok,
            error: None,
            seeds,
            metrics: Some(m),
        },
        Err(e) => RunRecord {
            model,
            k,
            repeat,
            status: Status::Failed,
            error: Some(e.to_string()),
            seeds,
            metrics: None,
        },
    }
}

/// Runs every cell. Failed cells are recorded, not propagated; only a
/// broken split aborts the whole benchmark.
pub fn run(cfg: &RunConfig, loaded: &Loaded, mut progress: impl FnMut(&RunRecord)) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut runs = Vec::new();
    let (mut train_points, mut test_points) = (0, 0);
    for repeat in 0..cfg.repeats {
        let seeds = cfg.seeds(repeat);
        let (train, test) = bitdata::split(&loaded.data, cfg.data.train_fraction, seeds.split)?;
        (train_points, test_points) = (train.len(), test.len());

        let rec = record(Model::Baseline, 0, repeat, seeds, run_baseline(cfg, &seeds, &train, &test));
        progress(&rec);
        runs.push(rec);
        for &k in &cfg.sweep {
            let rec = record(Model::Presorted, k, repeat, seeds, run_presorted(cfg, k, &seeds, &train, &test));
            progress(&rec);
            runs.push(rec);
        }
    }
    let means = report::means(&runs);
    Ok(BenchmarkReport {
        report_version: report::REPORT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        early_stop_uses_test_data: cfg.early_stop == EarlyStop::Test,
        dataset: loaded.summary(),
        train_points,
        test_points,
        failed_cells: runs.iter().filter(|r| r.status == Status::Failed).count(),
        runs,
        means,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
