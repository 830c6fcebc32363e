use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column '{column}': {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("invalid label at row {row}: {message}")]
    Label { row: usize, message: String },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("training diverged: non-finite loss at epoch {epoch} (learning rate too large?)")]
    Divergence { epoch: usize },
    #[error("non-finite gradient for row {row}")]
    NonFiniteGradient { row: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("AUC undefined: scores contain a single class")]
    SingleClass,
    #[error("r² undefined: {0}")]
    Rsquared(String),
    #[error("fold {fold} has a single class in its test rows; try another --seed or --stratify")]
    FoldMissingClass { fold: usize },
    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u64, expected: u64 },
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
