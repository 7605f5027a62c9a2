//! Run configuration: TOML file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use pstm_core::ensemble::Presort;
use pstm_core::{
    derive_seed, EarlyStop, EnsemblePlan, GaConfig, KMedoidConfig, PresortConfig, RoutingMode, ThresholdScaling, TmParams,
    TrainOptions,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Output directory used when neither the flag nor the config file sets one.
pub const OUT_ENV: &str = "PSTM_OUT";
pub const DEFAULT_OUT: &str = "pstm-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Idx,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Label used in reports; defaults to the dataset file or directory name.
    pub name: Option<String>,
    /// IDX image file, a directory holding one IDX image and one IDX label
    /// file, or a CSV file.
    pub path: Option<PathBuf>,
    /// IDX label file when `path` names the image file.
    pub labels: Option<PathBuf>,
    /// Inferred from the extension when unset (`.csv`, anything else IDX).
    pub format: Option<DataFormat>,
    /// Grey levels at or above this become 1.
    pub threshold: u32,
    /// Keep only the first `limit` samples.
    pub limit: Option<usize>,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            name: None,
            path: None,
            labels: None,
            format: None,
            threshold: pstm_core::bitdata::DEFAULT_THRESHOLD,
            limit: None,
            train_fraction: 0.8,
        }
    }
}

impl DataConfig {
    pub fn format(&self) -> DataFormat {
        self.format.unwrap_or_else(|| match &self.path {
            Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => DataFormat::Csv,
            _ => DataFormat::Idx,
        })
    }

    pub fn name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        self.path
            .as_deref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage seed is derived from it per repeat.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub repeats: usize,
    /// Machines for `prep`, `train` and `eval`.
    pub k: usize,
    /// Machine counts compared by `benchmark`.
    pub sweep: Vec<usize>,
    pub routing: RoutingMode,
    /// Per-machine vote threshold relative to `[tm] threshold`.
    pub threshold_scaling: ThresholdScaling,
    pub early_stop: EarlyStop,
    pub sequential: bool,
    pub workers: Option<usize>,
    pub data: DataConfig,
    pub tm: TmParams,
    pub dispersion: GaConfig,
    pub kmedoid: KMedoidConfig,
    pub alignment: GaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: None,
            repeats: 1,
            k: 4,
            sweep: vec![2, 4],
            routing: RoutingMode::default(),
            threshold_scaling: ThresholdScaling::default(),
            early_stop: EarlyStop::default(),
            sequential: false,
            workers: None,
            data: DataConfig::default(),
            tm: TmParams::default(),
            dispersion: GaConfig::default(),
            kmedoid: KMedoidConfig::default(),
            alignment: GaConfig::default(),
        }
    }
}

/// Seeds for one repeat. Section seeds in the config are mixed in, so
/// changing e.g. `[tm] seed` perturbs only that stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatSeeds {
    pub split: u64,
    pub tm: u64,
    pub dispersion: u64,
    pub alignment: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fails for seeds above `i64::MAX`, which TOML cannot represent.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Flag, then config file, then `$PSTM_OUT`, then `./pstm-out`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.sweep.is_empty() || self.sweep.contains(&0) {
            return bad(format!("sweep {:?} must list positive machine counts", self.sweep));
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        let f = self.data.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad(format!("train_fraction {f} must lie strictly between 0 and 1"));
        }
        self.tm.validate()?;
        self.dispersion.validate()?;
        self.alignment.validate()?;
        Ok(())
    }

    pub fn seeds(&self, repeat: usize) -> RepeatSeeds {
        let base = derive_seed(self.seed, repeat as u64);
        RepeatSeeds {
            split: derive_seed(base, 0),
            tm: derive_seed(base, 1) ^ self.tm.seed,
            dispersion: derive_seed(base, 2) ^ self.dispersion.seed,
            alignment: derive_seed(base, 3) ^ self.alignment.seed,
        }
    }

    pub fn tm_params(&self, seeds: &RepeatSeeds) -> TmParams {
        TmParams {
            seed: seeds.tm,
            ..self.tm.clone()
        }
    }

    pub fn presort_config(&self, k: usize, seeds: &RepeatSeeds) -> PresortConfig {
        PresortConfig {
            k,
            dispersion: self.dispersion.with_seed(seeds.dispersion),
            kmedoid: self.kmedoid.clone(),
            alignment: self.alignment.with_seed(seeds.alignment),
        }
    }

    pub fn plan(&self, presort: &Presort, seeds: &RepeatSeeds) -> Result<EnsemblePlan> {
        let mut plan = EnsemblePlan::new(presort, &self.tm_params(seeds), self.routing)?;
        plan.layout.threshold_scaling = self.threshold_scaling;
        Ok(plan)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            early_stop: self.early_stop,
            sequential: self.sequential,
            workers: self.workers,
        }
    }
}
