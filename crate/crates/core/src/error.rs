use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("label error at row {row}: unknown label `{label}`")]
    UnknownLabel { row: usize, label: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("invalid sample `{id}`: {reason}")]
    InvalidSample { id: String, reason: String },

    #[error("balancing infeasible: {0}")]
    Infeasible(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("embedding lookup error: no record for sample id `{0}`")]
    Lookup(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("model format error: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
