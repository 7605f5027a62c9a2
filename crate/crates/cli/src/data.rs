use std::fs;
use std::path::{Path, PathBuf};

use pstm_core::bitdata::{self, BinaryDataset, RawDataset};
use pstm_core::tsetlin::model::digest;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, DataFormat};
use crate::error::{CliError, Result};

/// A loaded, binarized dataset and its identity.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub name: String,
    pub data: BinaryDataset,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub points: usize,
    pub features: usize,
    pub classes: usize,
    pub class_counts: Vec<usize>,
    /// SHA-256 over the packed bits and labels.
    pub fingerprint: String,
}

impl Loaded {
    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.name.clone(),
            points: self.data.len(),
            features: self.data.features(),
            classes: self.data.classes(),
            class_counts: self.data.class_counts(),
            fingerprint: self.fingerprint.clone(),
        }
    }
}

pub fn fingerprint(data: &BinaryDataset) -> String {
    let mut bytes = Vec::new();
    bytes.extend((data.features() as u64).to_le_bytes());
    for (x, y) in data.iter() {
        bytes.extend((y as u64).to_le_bytes());
        for w in x.words() {
            bytes.extend(w.to_le_bytes());
        }
    }
    digest(&bytes)
}

/// Finds the single `*idx3-ubyte` / `*idx1-ubyte` pair inside `dir`.
fn idx_pair(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if name.ends_with("idx3-ubyte") {
            images.push(path);
        } else if name.ends_with("idx1-ubyte") {
            labels.push(path);
        }
    }
    match (images.len(), labels.len()) {
        (1, 1) => Ok((images.remove(0), labels.remove(0))),
        (i, l) => Err(CliError::Config(format!(
            "{} holds {i} IDX image and {l} IDX label files; pass --dataset and --labels explicitly",
            dir.display()
        ))),
    }
}

pub fn load_raw(cfg: &DataConfig) -> Result<RawDataset> {
    let path = cfg
        .path
        .as_deref()
        .ok_or_else(|| CliError::Config("no dataset given (--dataset or [data] path)".into()))?;
    if !path.exists() {
        return Err(CliError::io(path, "no such file or directory"));
    }
    let raw = match cfg.format() {
        DataFormat::Csv => bitdata::load_csv(path)?,
        DataFormat::Idx => {
            let (images, labels) = match (&cfg.labels, path.is_dir()) {
                (Some(l), false) => (path.to_path_buf(), l.clone()),
                (None, true) => idx_pair(path)?,
                (Some(_), true) => return Err(CliError::Config("--labels needs --dataset to name the image file".into())),
                (None, false) => {
                    return Err(CliError::Config(
                        "IDX data needs --labels, or --dataset pointing at a directory".into(),
                    ))
                }
            };
            bitdata::load_idx(images, labels)?
        }
    };
    match cfg.limit {
        Some(n) if n < raw.len() => Ok(RawDataset::with_classes(
            raw.samples()[..n].to_vec(),
            raw.labels()[..n].to_vec(),
            raw.classes(),
        )?),
        _ => Ok(raw),
    }
}

pub fn load(cfg: &DataConfig) -> Result<Loaded> {
    let raw = load_raw(cfg)?;
    let data = bitdata::binarize(&raw, cfg.threshold)?;
    Ok(Loaded {
        name: cfg.name(),
        fingerprint: fingerprint(&data),
        data,
    })
}
