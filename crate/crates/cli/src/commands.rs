use std::fs;
use std::path::{Path, PathBuf};

use pstm_core::alignment::ClassClusters;
use pstm_core::bitdata::{split_indices, BinaryDataset};
use pstm_core::ensemble::{
    machine_file, train_baseline, verify_budgets, verify_partition, Manifest, Presort, MANIFEST_FILE,
};
use pstm_core::tsetlin::model::digest;
use pstm_core::{
    evaluate, presort, Arrangement, EarlyStop, EnsemblePlan, Evaluation, MedoidGrid, PresortedEnsemble, TrainReport,
    TsetlinMachine, UpdateStats,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{Cli, Command, ModelArgs, RunArgs};
use crate::benchmark::{self, baseline_stop};
use crate::config::RunConfig;
use crate::data::{self, Loaded};
use crate::error::{CliError, Result};
use crate::report::{read_json, write_json};

pub const GRID_FILE: &str = "grid.json";
pub const PARTITIONS_FILE: &str = "partitions.json";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const ENSEMBLE_DIR: &str = "ensemble";
pub const BASELINE_DIR: &str = "baseline";
pub const BASELINE_MODEL: &str = "model.tm";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prep(args) => prep(&args.resolve()?).map(|_| ()),
        Command::Train(ModelArgs { run, baseline }) => train(&run.resolve()?, baseline).map(|_| ()),
        Command::Eval(ModelArgs { run, baseline }) => eval(&run.resolve()?, baseline).map(|_| ()),
        Command::Benchmark(args) => bench(&args),
        Command::Inspect(args) => {
            println!("{}", serde_json::to_string_pretty(&inspect(&args.path)?).expect("json value"));
            Ok(())
        }
    }
}

/// Stage outputs of `prep` that `train` needs besides the partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridArtifact {
    pub config: RunConfig,
    pub dataset_fingerprint: String,
    pub k: usize,
    pub dispersion_scores: Vec<u64>,
    pub arrangement: Arrangement,
    pub alignment_score: u64,
    pub grid: MedoidGrid,
    pub clusters: Vec<ClassClusters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionArtifact {
    pub dataset_fingerprint: String,
    pub k: usize,
    pub split_seed: u64,
    /// Dataset indices of the training split, in split order.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Positions in `train_indices` per machine.
    pub partitions: Vec<Vec<usize>>,
}

impl PartitionArtifact {
    pub fn train(&self, data: &BinaryDataset) -> BinaryDataset {
        data.subset(&self.train_indices)
    }

    pub fn test(&self, data: &BinaryDataset) -> BinaryDataset {
        data.subset(&self.test_indices)
    }
}

fn note(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn load_data(cfg: &RunConfig) -> Result<Loaded> {
    let loaded = data::load(&cfg.data)?;
    note(format!(
        "{}: {} points, {} features, {} classes",
        loaded.name,
        loaded.data.len(),
        loaded.data.features(),
        loaded.data.classes()
    ));
    Ok(loaded)
}

fn split0(cfg: &RunConfig, data: &BinaryDataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let (train, test) = split_indices(data.len(), cfg.data.train_fraction, cfg.seeds(0).split)?;
    let counts = data.subset(&train).class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(pstm_core::Error::ClassEmptied(c).into());
    }
    Ok((train, test))
}

fn write_effective_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("effective-config.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| CliError::io(&path, e))
}

pub fn prep(cfg: &RunConfig) -> Result<PathBuf> {
    let loaded = load_data(cfg)?;
    let (train_idx, test_idx) = split0(cfg, &loaded.data)?;
    let train = loaded.data.subset(&train_idx);
    let sorted = presort(&train, &cfg.presort_config(cfg.k, &cfg.seeds(0)))?;
    verify_partition(&sorted.partitions, train.len())?;

    let out = cfg.out_dir();
    write_effective_config(cfg, &out)?;
    let grid = GridArtifact {
        config: cfg.clone(),
        dataset_fingerprint: loaded.fingerprint.clone(),
        k: sorted.k,
        dispersion_scores: sorted.dispersion_scores,
        arrangement: sorted.arrangement,
        alignment_score: sorted.alignment_score,
        grid: sorted.grid,
        clusters: sorted.clusters,
    };
    write_json(&out.join(GRID_FILE), &grid)?;
    let parts = PartitionArtifact {
        dataset_fingerprint: loaded.fingerprint,
        k: sorted.k,
        split_seed: cfg.seeds(0).split,
        train_indices: train_idx,
        test_indices: test_idx,
        partitions: sorted.partitions,
    };
    write_json(&out.join(PARTITIONS_FILE), &parts)?;
    write_clusters_csv(&out.join(CLUSTERS_FILE), &grid, &parts, &train)?;

    let sizes: Vec<usize> = parts.partitions.iter().map(Vec::len).collect();
    note(format!(
        "k={} partition sizes {:?}, alignment score {}",
        grid.k, sizes, grid.alignment_score
    ));
    println!("{}", out.display());
    Ok(out)
}

fn write_clusters_csv(path: &Path, grid: &GridArtifact, parts: &PartitionArtifact, train: &BinaryDataset) -> Result<()> {
    let io = |e: csv::Error| CliError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["dataset_index", "class", "cluster", "machine", "is_medoid", "distance_to_medoid"])
        .map_err(io)?;
    let mut rows = Vec::new();
    for (class, cc) in grid.clusters.iter().enumerate() {
        for (pos, &member) in cc.members.iter().enumerate() {
            let cluster = cc.result.assignment[pos];
            let medoid = cc.members[cc.result.medoid_indices[cluster]];
            rows.push((
                parts.train_indices[member],
                class,
                cluster,
                grid.arrangement.column_of(class, cluster),
                medoid == member,
                train.point(member).distance(train.point(medoid)),
            ));
        }
    }
    rows.sort();
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn load_artifacts(cfg: &RunConfig, loaded: &Loaded) -> Result<(GridArtifact, PartitionArtifact)> {
    let out = cfg.out_dir();
    let (grid_path, parts_path) = (out.join(GRID_FILE), out.join(PARTITIONS_FILE));
    for p in [&grid_path, &parts_path] {
        if !p.exists() {
            return Err(CliError::io(p, "missing prep artifact; run `pstm prep` first"));
        }
    }
    let grid: GridArtifact = read_json(&grid_path)?;
    let parts: PartitionArtifact = read_json(&parts_path)?;
    if grid.dataset_fingerprint != loaded.fingerprint || parts.dataset_fingerprint != loaded.fingerprint {
        return Err(CliError::Config(
            "prep artifacts were built from a different dataset or threshold".into(),
        ));
    }
    if grid.k != parts.k || parts.partitions.len() != grid.k {
        return Err(CliError::io(&parts_path, "grid and partitions disagree on k"));
    }
    Ok((grid, parts))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStats {
    pub config: RunConfig,
    pub model: String,
    pub mode: String,
    pub early_stop_uses_test_data: bool,
    pub stats: UpdateStats,
    pub per_machine: Vec<UpdateStats>,
    pub budgets: Vec<usize>,
    pub partition_sizes: Vec<usize>,
    /// Most machines alive at once during training.
    pub peak_resident_machines: usize,
    pub digests: Vec<String>,
    pub files: Vec<String>,
}

pub fn train(cfg: &RunConfig, baseline: bool) -> Result<TrainStats> {
    let loaded = load_data(cfg)?;
    let out = cfg.out_dir();
    let uses_test = cfg.early_stop == EarlyStop::Test;
    let stats = if baseline {
        let (train_idx, test_idx) = split0(cfg, &loaded.data)?;
        let (train, test) = (loaded.data.subset(&train_idx), loaded.data.subset(&test_idx));
        let params = cfg.tm_params(&cfg.seeds(0));
        let (tm, stats) = train_baseline(&train, &params, baseline_stop(cfg.early_stop, &train, &test))?;
        let dir = out.join(BASELINE_DIR);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let bytes = tm.to_bytes();
        let path = dir.join(BASELINE_MODEL);
        fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
        TrainStats {
            config: cfg.clone(),
            model: "baseline".into(),
            mode: "single".into(),
            early_stop_uses_test_data: uses_test,
            per_machine: vec![stats.clone()],
            stats,
            budgets: vec![params.clauses_per_class],
            partition_sizes: vec![train.len()],
            peak_resident_machines: 1,
            digests: vec![digest(&bytes)],
            files: vec![BASELINE_MODEL.into()],
        }
    } else {
        let (grid, parts) = load_artifacts(cfg, &loaded)?;
        if grid.k != cfg.k {
            return Err(CliError::Config(format!(
                "prep artifacts are for k={} but k={} was requested",
                grid.k, cfg.k
            )));
        }
        let (train, test) = (parts.train(&loaded.data), parts.test(&loaded.data));
        let sorted = Presort {
            k: grid.k,
            clusters: grid.clusters,
            dispersion_scores: grid.dispersion_scores,
            arrangement: grid.arrangement,
            alignment_score: grid.alignment_score,
            grid: grid.grid,
            partitions: parts.partitions,
        };
        let plan = cfg.plan(&sorted, &cfg.seeds(0))?;
        verify_partition(&plan.partitions, train.len())?;
        verify_budgets(&plan.layout.budgets, cfg.tm.clauses_per_class)?;
        let dir = out.join(ENSEMBLE_DIR);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let report = train_ensemble_to(cfg, &plan, &train, &test, &dir)?;
        TrainStats {
            config: cfg.clone(),
            model: "presorted".into(),
            mode: if cfg.sequential { "sequential" } else { "parallel" }.into(),
            early_stop_uses_test_data: uses_test,
            stats: report.total,
            per_machine: report.per_machine,
            budgets: plan.layout.budgets.clone(),
            partition_sizes: plan.partitions.iter().map(Vec::len).collect(),
            peak_resident_machines: report.peak_resident_machines,
            digests: report.digests,
            files: (0..plan.k()).map(machine_file).chain([MANIFEST_FILE.to_string()]).collect(),
        }
    };
    let dir = out.join(if baseline { BASELINE_DIR } else { ENSEMBLE_DIR });
    write_json(&dir.join("train.json"), &stats)?;
    write_effective_config(cfg, &out)?;
    note(format!(
        "{} trained: {} clause updates, {} epochs, peak {} resident machine(s)",
        stats.model, stats.stats.clause_updates, stats.stats.epochs_run, stats.peak_resident_machines
    ));
    println!("{}", dir.display());
    Ok(stats)
}

/// Parallel mode saves after training; sequential mode writes each machine
/// file as soon as that machine is done and then drops it.
fn train_ensemble_to(
    cfg: &RunConfig,
    plan: &EnsemblePlan,
    train: &BinaryDataset,
    test: &BinaryDataset,
    dir: &Path,
) -> Result<TrainReport> {
    let opts = cfg.train_options();
    if !cfg.sequential {
        let (ensemble, report) = plan.train_parallel(train, &opts, Some(test))?;
        ensemble.save(dir)?;
        return Ok(report);
    }
    let report = plan.train_sequential(train, &opts, Some(test), |m, tm| {
        tm.save(dir.join(machine_file(m)))?;
        Ok(())
    })?;
    Manifest::new(plan.layout.clone(), report.digests.clone()).write(dir)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub model: String,
    pub routing: Option<pstm_core::RoutingMode>,
    pub evaluation: Evaluation,
    pub clause_evaluations_per_input: f64,
}

pub fn eval(cfg: &RunConfig, baseline: bool) -> Result<EvalReport> {
    let loaded = load_data(cfg)?;
    let out = cfg.out_dir();
    let (evaluation, routing, dir) = if baseline {
        let (_, test_idx) = split0(cfg, &loaded.data)?;
        let dir = out.join(BASELINE_DIR);
        let path = dir.join(BASELINE_MODEL);
        if !path.exists() {
            return Err(CliError::io(&path, "missing model; run `pstm train --baseline` first"));
        }
        let tm = TsetlinMachine::load(&path)?;
        (evaluate(&tm, &loaded.data.subset(&test_idx))?, None, dir)
    } else {
        let parts: PartitionArtifact = read_json(&out.join(PARTITIONS_FILE))?;
        if parts.dataset_fingerprint != loaded.fingerprint {
            return Err(CliError::Config("model was trained on a different dataset".into()));
        }
        let dir = out.join(ENSEMBLE_DIR);
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(CliError::io(&dir.join(MANIFEST_FILE), "missing ensemble; run `pstm train` first"));
        }
        let ensemble = PresortedEnsemble::load(&dir)?.with_routing(cfg.routing);
        (evaluate(&ensemble, &parts.test(&loaded.data))?, Some(cfg.routing), dir)
    };
    let report = EvalReport {
        config: cfg.clone(),
        model: if baseline { "baseline" } else { "presorted" }.into(),
        routing,
        clause_evaluations_per_input: evaluation.clause_evaluations as f64 / evaluation.total as f64,
        evaluation,
    };
    write_json(&dir.join("eval.json"), &report)?;
    println!(
        "accuracy {:.4} ({}/{}), inference {:.4}s, {} clause evaluations",
        report.evaluation.accuracy,
        report.evaluation.correct,
        report.evaluation.total,
        report.evaluation.wall_time_s,
        report.evaluation.clause_evaluations
    );
    Ok(report)
}

fn bench(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let loaded = load_data(&cfg)?;
    let report = benchmark::run(&cfg, &loaded, |r| match &r.metrics {
        Some(m) => note(format!(
            "repeat {} {:?} k={}: accuracy {:.4}, train {:.2}s, infer {:.4}s, {} clause updates",
            r.repeat, r.model, r.k, m.accuracy, m.train_s, m.infer_s, m.clause_updates
        )),
        None => note(format!(
            "repeat {} {:?} k={}: FAILED {}",
            r.repeat,
            r.model,
            r.k,
            r.error.as_deref().unwrap_or_default()
        )),
    })?;
    let out = cfg.out_dir();
    write_effective_config(&cfg, &out)?;
    for path in report.write_all(&out)? {
        println!("{}", path.display());
    }
    if report.failed_cells > 0 {
        return Err(CliError::CellsFailed {
            failed: report.failed_cells,
            total: report.runs.len(),
        });
    }
    Ok(())
}

fn machine_summary(tm: &TsetlinMachine) -> serde_json::Value {
    let per_class: Vec<_> = (0..tm.classes())
        .map(|c| {
            let bank = tm.bank(c);
            let counts: Vec<u32> = (0..tm.clauses_per_class()).map(|j| bank.included_literals(j)).collect();
            json!({
                "class": c,
                "mean_included_literals": counts.iter().map(|&n| f64::from(n)).sum::<f64>() / counts.len() as f64,
                "empty_clauses": counts.iter().filter(|&&n| n == 0).count(),
            })
        })
        .collect();
    json!({
        "params": tm.params(),
        "features": tm.features(),
        "classes": tm.classes(),
        "digest": tm.digest(),
        "clauses": per_class,
    })
}

pub fn inspect(path: &Path) -> Result<serde_json::Value> {
    if path.is_dir() {
        let dir = if path.join(MANIFEST_FILE).exists() {
            path.to_path_buf()
        } else {
            path.join(ENSEMBLE_DIR)
        };
        let manifest = Manifest::read(&dir)?;
        let ensemble = PresortedEnsemble::load(&dir)?;
        return Ok(json!({
            "kind": "ensemble",
            "k": ensemble.k(),
            "routing": manifest.layout.routing,
            "budgets": manifest.layout.budgets,
            "seeds": manifest.layout.seeds,
            "params": manifest.layout.params,
            "machines": ensemble.machines.iter().map(machine_summary).collect::<Vec<_>>(),
        }));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let value: serde_json::Value = read_json(path)?;
            if let Some(means) = value.get("means") {
                Ok(json!({ "kind": "benchmark", "config": value["config"], "means": means }))
            } else {
                Ok(value)
            }
        }
        _ => {
            let tm = TsetlinMachine::load(path)?;
            let mut summary = machine_summary(&tm);
            summary["kind"] = json!("machine");
            Ok(summary)
        }
    }
}
