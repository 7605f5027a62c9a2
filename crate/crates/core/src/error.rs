use std::io;

use thiserror::Error;

/// Errors raised by the pre-sort pipeline and the Tsetlin machines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bit width mismatch: {left} vs {right}")]
    WidthMismatch { left: usize, right: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("need {required} points but only {available} are available")]
    NotEnoughPoints { available: usize, required: usize },

    #[error("class {class} has {available} points but {required} are required")]
    ClassTooSmall {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("class {0} has no training points after the split")]
    ClassEmptied(usize),

    #[error("class {0} has no points")]
    MissingClass(usize),

    #[error("at least two classes are required, found {0}")]
    TooFewClasses(usize),

    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated IDX {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("IDX image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("clause budget of {total} per class cannot give {machines} machines a clause pair each")]
    Budget { total: usize, machines: usize },

    #[error("machine {0} has an empty partition")]
    EmptyPartition(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        Error::Csv {
            line,
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
