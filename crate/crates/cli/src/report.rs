//! Benchmark report: JSON, per-run CSV and plot-data CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{RepeatSeeds, RunConfig};
use crate::data::DatasetSummary;
use crate::error::{CliError, Result};

pub const REPORT_VERSION: u32 = 1;
pub const SCHEMA: &str = include_str!("../schema/benchmark-report.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Baseline,
    Presorted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub correct: usize,
    pub test_points: usize,
    /// Dispersion, K-medoid and alignment; zero for the baseline.
    pub presort_s: f64,
    pub train_s: f64,
    pub infer_s: f64,
    pub clause_updates: u64,
    pub feedback_applied: u64,
    pub clause_evaluations: u64,
    /// Largest epoch count over the machines.
    pub epochs_run: usize,
    pub early_stopped_machines: usize,
    pub peak_resident_machines: usize,
    pub partition_sizes: Vec<usize>,
    pub budgets: Vec<usize>,
    pub partition_exact: bool,
    pub budgets_exact: bool,
    pub digests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: Model,
    /// Machine count; 0 marks the baseline.
    pub k: usize,
    pub repeat: usize,
    pub status: Status,
    pub error: Option<String>,
    pub seeds: RepeatSeeds,
    pub metrics: Option<Metrics>,
}

/// Arithmetic means over the successful runs of one (model, k) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRecord {
    pub model: Model,
    pub k: usize,
    pub runs: usize,
    pub failed: usize,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub presort_s: f64,
    pub train_s: f64,
    pub infer_s: f64,
    pub clause_updates: f64,
    pub clause_evaluations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub report_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    /// Set when early stopping looked at test accuracy.
    pub early_stop_uses_test_data: bool,
    pub dataset: DatasetSummary,
    pub train_points: usize,
    pub test_points: usize,
    pub runs: Vec<RunRecord>,
    pub means: Vec<MeanRecord>,
    pub failed_cells: usize,
    pub wall_time_s: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Baseline first, then presorted cells by increasing k.
pub fn means(runs: &[RunRecord]) -> Vec<MeanRecord> {
    let mut cells: Vec<(Model, usize)> = runs.iter().map(|r| (r.model, r.k)).collect();
    cells.sort();
    cells.dedup();
    cells
        .into_iter()
        .map(|(model, k)| {
            let cell: Vec<&RunRecord> = runs.iter().filter(|r| r.model == model && r.k == k).collect();
            let ok: Vec<&Metrics> = cell.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let col = |f: fn(&Metrics) -> f64| ok.iter().map(|m| f(m)).collect::<Vec<_>>();
            let acc = col(|m| m.accuracy);
            MeanRecord {
                model,
                k,
                runs: ok.len(),
                failed: cell.len() - ok.len(),
                accuracy: mean(&acc),
                accuracy_std: std_dev(&acc),
                presort_s: mean(&col(|m| m.presort_s)),
                train_s: mean(&col(|m| m.train_s)),
                infer_s: mean(&col(|m| m.infer_s)),
                clause_updates: mean(&col(|m| m.clause_updates as f64)),
                clause_evaluations: mean(&col(|m| m.clause_evaluations as f64)),
            }
        })
        .collect()
}

impl BenchmarkReport {
    pub fn mean_of(&self, model: Model, k: usize) -> Option<&MeanRecord> {
        self.means.iter().find(|m| m.model == model && m.k == k)
    }

    pub fn runs_of(&self, model: Model, k: usize) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.model == model && r.k == k)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "dataset",
            "model",
            "k",
            "repeat",
            "status",
            "accuracy",
            "correct",
            "test_points",
            "presort_s",
            "train_s",
            "infer_s",
            "clause_updates",
            "feedback_applied",
            "clause_evaluations",
            "epochs_run",
            "early_stopped_machines",
            "peak_resident_machines",
            "partition_sizes",
            "budgets",
            "partition_exact",
            "budgets_exact",
            "split_seed",
            "tm_seed",
            "routing",
            "early_stop",
            "clauses_per_class",
            "threshold",
            "specificity",
            "states",
            "epochs",
            "error",
        ])
        .map_err(csv_err)?;
        let c = &self.config;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
        for r in &self.runs {
            let model = serde_plain(&r.model);
            let status = serde_plain(&r.status);
            let mut row = vec![self.dataset.name.clone(), model, r.k.to_string(), r.repeat.to_string(), status];
            match &r.metrics {
                Some(m) => row.extend([
                    m.accuracy.to_string(),
                    m.correct.to_string(),
                    m.test_points.to_string(),
                    m.presort_s.to_string(),
                    m.train_s.to_string(),
                    m.infer_s.to_string(),
                    m.clause_updates.to_string(),
                    m.feedback_applied.to_string(),
                    m.clause_evaluations.to_string(),
                    m.epochs_run.to_string(),
                    m.early_stopped_machines.to_string(),
                    m.peak_resident_machines.to_string(),
                    join(&m.partition_sizes),
                    join(&m.budgets),
                    m.partition_exact.to_string(),
                    m.budgets_exact.to_string(),
                ]),
                None => row.extend(std::iter::repeat(String::new()).take(16)),
            }
            row.extend([
                r.seeds.split.to_string(),
                r.seeds.tm.to_string(),
                serde_plain(&c.routing),
                serde_plain(&c.early_stop),
                c.tm.clauses_per_class.to_string(),
                c.tm.threshold.to_string(),
                c.tm.specificity.to_string(),
                c.tm.states.to_string(),
                c.tm.epochs.to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::Io {
            path: "csv".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    /// One row per (model, k) mean; the baseline has K = 0.
    pub fn write_plot_data<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dataset", "K", "accuracy", "train_s", "infer_s", "clause_updates"])
            .map_err(csv_err)?;
        for m in self.means.iter().filter(|m| m.runs > 0) {
            w.write_record([
                self.dataset.name.clone(),
                m.k.to_string(),
                m.accuracy.to_string(),
                m.train_s.to_string(),
                m.infer_s.to_string(),
                m.clause_updates.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::Io {
            path: "csv".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    /// Writes `benchmark.json`, `benchmark.csv` and `plot-data.csv`.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let json = dir.join("benchmark.json");
        self.write_json(&json)?;
        let csv_path = dir.join("benchmark.csv");
        self.write_csv(create(&csv_path)?)?;
        let plot = dir.join("plot-data.csv");
        self.write_plot_data(create(&plot)?)?;
        Ok(vec![json, csv_path, plot])
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io {
        path: "csv".into(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

/// Serde name of a unit variant, e.g. `nearest-medoid`.
fn serde_plain<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(model: Model, k: usize, repeat: usize, acc: Option<f64>) -> RunRecord {
        RunRecord {
            model,
            k,
            repeat,
            status: if acc.is_some() { Status::Ok } else { Status::Failed },
            error: acc.is_none().then(|| "boom".into()),
            seeds: RepeatSeeds {
                split: 1,
                tm: 2,
                dispersion: 3,
                alignment: 4,
            },
            metrics: acc.map(|accuracy| Metrics {
                accuracy,
                correct: 0,
                test_points: 10,
                presort_s: 0.0,
                train_s: 2.0 * accuracy,
                infer_s: 1.0,
                clause_updates: (100.0 * accuracy) as u64,
                feedback_applied: 0,
                clause_evaluations: 7,
                epochs_run: 1,
                early_stopped_machines: 0,
                peak_resident_machines: 1,
                partition_sizes: vec![5, 5],
                budgets: vec![2, 2],
                partition_exact: true,
                budgets_exact: true,
                digests: vec![],
            }),
        }
    }

    fn report(runs: Vec<RunRecord>) -> BenchmarkReport {
        let means = means(&runs);
        BenchmarkReport {
            report_version: REPORT_VERSION,
            tool_version: "test".into(),
            config: RunConfig::default(),
            early_stop_uses_test_data: false,
            dataset: DatasetSummary {
                name: "toy".into(),
                points: 10,
                features: 3,
                classes: 2,
                class_counts: vec![5, 5],
                fingerprint: "00".into(),
            },
            train_points: 8,
            test_points: 2,
            failed_cells: runs.iter().filter(|r| r.status == Status::Failed).count(),
            runs,
            means,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn means_are_arithmetic_and_skip_failures() {
        let runs = vec![
            record(Model::Presorted, 2, 0, Some(0.5)),
            record(Model::Baseline, 0, 0, Some(0.9)),
            record(Model::Presorted, 2, 1, Some(0.7)),
            record(Model::Presorted, 2, 2, None),
        ];
        let m = means(&runs);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].model, Model::Baseline);
        let p = &m[1];
        assert_eq!((p.runs, p.failed), (2, 1));
        assert!((p.accuracy - 0.6).abs() < 1e-12);
        assert!((p.train_s - 1.2).abs() < 1e-12);
        assert!((p.clause_updates - 60.0).abs() < 1e-12);
        assert!((p.accuracy_std - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_shapes() {
        let r = report(vec![
            record(Model::Baseline, 0, 0, Some(0.9)),
            record(Model::Presorted, 2, 0, None),
        ]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let width = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(lines[2].contains("failed") && lines[2].ends_with("boom"));

        let mut buf = Vec::new();
        r.write_plot_data(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "dataset,K,accuracy,train_s,infer_s,clause_updates");
        assert_eq!(text.lines().nth(1).unwrap(), "toy,0,0.9,1.8,1,90");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn json_round_trip() {
        let r = report(vec![record(Model::Presorted, 4, 0, Some(0.25))]);
        let dir = tempfile::tempdir().unwrap();
        let written = r.write_all(dir.path()).unwrap();
        assert_eq!(written.len(), 3);
        let back: BenchmarkReport = read_json(&written[0]).unwrap();
        assert_eq!(back, r);
    }
}
