use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty after {stage}")]
    EmptyDataset { stage: &'static str },

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: &'static str, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is rank deficient (row {row}, residual norm {norm:e})")]
    RankDeficient { row: usize, norm: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter { .. } | Error::Config(_) => ErrorClass::Config,
            Error::NotPositiveDefinite { .. }
            | Error::RankDeficient { .. }
            | Error::Degenerate(_)
            | Error::Numeric(_)
            | Error::Generation(_) => ErrorClass::Numeric,
            Error::Parse { .. }
            | Error::EmptyDataset { .. }
            | Error::Split(_)
            | Error::Shape(_)
            | Error::Contract(_)
            | Error::Evaluation(_)
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorClass::Data,
        }
    }
}
