use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Bad flags, config file or parameter values.
    pub const CONFIG: u8 = 2;
    /// Unreadable or malformed files.
    pub const IO: u8 = 3;
    /// Data that violates a pipeline contract (too few points per class, ...).
    pub const DATA: u8 = 4;
    /// A benchmark finished but at least one cell failed.
    pub const CELL_FAILED: u8 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Core(#[from] pstm_core::Error),

    #[error("{failed} of {total} benchmark cells failed")]
    CellsFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        use pstm_core::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::CellsFailed { .. } => exit::CELL_FAILED,
            CliError::Core(e) => match e {
                E::Config(_) | E::Budget { .. } => exit::CONFIG,
                E::Io(_) | E::Json(_) | E::Format(_) | E::BadMagic { .. } | E::Truncated { .. } | E::Csv { .. } => {
                    exit::IO
                }
                _ => exit::DATA,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
