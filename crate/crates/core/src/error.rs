use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SklrError>;

#[derive(Debug, Error)]
pub enum SklrError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("label column {column:?} has {found} distinct values, expected 2")]
    LabelCount { column: String, found: usize },

    #[error("unknown label column {0:?}")]
    UnknownColumn(String),

    #[error("dimension mismatch: expected {expected} features, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),

    #[error("value {value} outside the open interval (0, 1)")]
    OutOfDomain { value: f64 },

    #[error("no feasible starting point: {0}")]
    Infeasible(String),

    #[error("index set {0} is empty")]
    EmptyIndexSet(&'static str),

    #[error("solver contract violated: {0}")]
    Contract(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model schema version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl SklrError {
    /// True for errors that indicate a broken internal invariant rather than bad input.
    pub fn is_contract(&self) -> bool {
        matches!(self, SklrError::Contract(_) | SklrError::EmptyIndexSet(_))
    }
}
