use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pstm_core::{EarlyStop, RoutingMode, ThresholdScaling};
use serde::de::DeserializeOwned;

use crate::config::{DataFormat, RunConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "pstm", version, about = "Pre-sorted Tsetlin Machines: prepare, train, evaluate, benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-sort the training split: writes grid.json, partitions.json and clusters.csv.
    Prep(RunArgs),
    /// Train the ensemble from prep artifacts, or the baseline with --baseline.
    Train(ModelArgs),
    /// Evaluate a trained ensemble or baseline on the held-out split.
    Eval(ModelArgs),
    /// Baseline plus every K in the sweep, over repeated splits.
    Benchmark(RunArgs),
    /// Summarize a model file, ensemble directory or JSON report.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Use the single full-size machine.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Flags shared by every data-driven command. Each one overrides the
/// corresponding config-file value.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// IDX image file, directory with an IDX pair, or CSV file.
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// IDX label file when --dataset names the image file.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_parser = serde_value::<DataFormat>, value_name = "idx|csv")]
    pub format: Option<DataFormat>,
    /// Dataset label in reports.
    #[arg(long)]
    pub name: Option<String>,
    /// Binarization threshold on 0..=255 grey levels.
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Use only the first N samples.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Machine count for prep/train/eval.
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated machine counts for benchmark, e.g. 2,4,8,16,32.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    /// Clauses per class, summed over all machines.
    #[arg(long)]
    pub clauses: Option<usize>,
    /// Vote threshold T.
    #[arg(long = "T", value_name = "T")]
    pub vote_threshold: Option<u32>,
    /// Specificity s.
    #[arg(long = "s", value_name = "S")]
    pub specificity: Option<f64>,
    /// Automaton states N.
    #[arg(long)]
    pub states: Option<u16>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = serde_value::<EarlyStop>, value_name = "train|test|off")]
    pub early_stop: Option<EarlyStop>,
    #[arg(long, value_parser = serde_value::<RoutingMode>, value_name = "nearest|argmax")]
    pub routing: Option<RoutingMode>,
    /// Per-machine T: scaled with the clause budget, or the same for all.
    #[arg(long, value_parser = serde_value::<ThresholdScaling>, value_name = "proportional|fixed")]
    pub threshold_scaling: Option<ThresholdScaling>,
    /// Train one machine at a time.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Output directory [default: $PSTM_OUT, else ./pstm-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training threads [default: one per machine].
    #[arg(long)]
    pub workers: Option<usize>,
}

impl RunArgs {
    /// Config file (or defaults), then flags, then validation.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        set_opt(&mut cfg.data.path, &self.dataset);
        set_opt(&mut cfg.data.labels, &self.labels);
        set_opt(&mut cfg.data.format, &self.format);
        set_opt(&mut cfg.data.name, &self.name);
        set_opt(&mut cfg.data.limit, &self.limit);
        set(&mut cfg.data.threshold, &self.threshold);
        set(&mut cfg.data.train_fraction, &self.train_fraction);
        set(&mut cfg.k, &self.k);
        set(&mut cfg.sweep, &self.sweep);
        set(&mut cfg.tm.clauses_per_class, &self.clauses);
        set(&mut cfg.tm.threshold, &self.vote_threshold);
        set(&mut cfg.tm.specificity, &self.specificity);
        set(&mut cfg.tm.states, &self.states);
        set(&mut cfg.tm.epochs, &self.epochs);
        set(&mut cfg.early_stop, &self.early_stop);
        set(&mut cfg.routing, &self.routing);
        set(&mut cfg.threshold_scaling, &self.threshold_scaling);
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.repeats, &self.repeats);
        set_opt(&mut cfg.out, &self.out);
        set_opt(&mut cfg.workers, &self.workers);
        if self.sequential {
            cfg.sequential = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "k = 3\nseed = 9\n[tm]\nclauses_per_class = 40\nthreshold = 7\n").unwrap();
        let cli = Cli::try_parse_from([
            "pstm",
            "prep",
            "--config",
            file.to_str().unwrap(),
            "--k",
            "5",
            "--T",
            "11",
            "--s",
            "3.5",
            "--routing",
            "argmax",
            "--early-stop",
            "off",
            "--sweep",
            "2,4,8",
            "--format",
            "csv",
            "--sequential",
        ])
        .unwrap();
        let Command::Prep(args) = cli.command else { panic!() };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.tm.clauses_per_class, 40);
        assert_eq!(cfg.tm.threshold, 11);
        assert_eq!(cfg.tm.specificity, 3.5);
        assert_eq!(cfg.routing, RoutingMode::AllMachinesArgmax);
        assert_eq!(cfg.early_stop, EarlyStop::Off);
        assert_eq!(cfg.sweep, vec![2, 4, 8]);
        assert_eq!(cfg.data.format, Some(DataFormat::Csv));
        assert!(cfg.sequential);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Cli::try_parse_from(["pstm", "prep", "--routing", "random"]).is_err());
        assert!(Cli::try_parse_from(["pstm", "prep", "--early-stop", "never"]).is_err());
        assert!(Cli::try_parse_from(["pstm", "prep", "--format", "xml"]).is_err());
        let cli = Cli::try_parse_from(["pstm", "benchmark", "--repeats", "0"]).unwrap();
        let Command::Benchmark(args) = cli.command else { panic!() };
        assert!(args.resolve().is_err());
    }
}
