use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: format error: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("cannot parse recording metadata from file name `{raw}`: {reason}")]
    Metadata { raw: String, reason: String },

    #[error("annotation row {row}: {reason}")]
    Annotation { row: usize, reason: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training batch {batch} contains cycles of held-out patient `{patient}`")]
    Leakage { batch: usize, patient: String },

    #[error("container error: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
