use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the TARP pipeline.
#[derive(Debug, Error)]
pub enum TarpError {
    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: &'static str, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("response is not binary: {0}")]
    NotBinary(String),

    #[error("all marginal utilities are zero; screening is degenerate")]
    DegenerateScreening,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("replicate {index} (seed {seed}) failed: {source}")]
    Replicate {
        index: usize,
        seed: u64,
        #[source]
        source: Box<TarpError>,
    },

    #[error("dataset {index} (seed {seed}) failed: {source}")]
    Dataset {
        index: usize,
        seed: u64,
        #[source]
        source: Box<TarpError>,
    },

    #[error("config error on line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed projection dump: {0}")]
    Decode(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TarpError {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        TarpError::Parameter {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn dim(message: impl Into<String>) -> Self {
        TarpError::Dimension(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TarpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            TarpError::Ingestion { .. } => "ingestion",
            TarpError::Dimension(_) => "dimension",
            TarpError::Parameter { .. } => "parameter",
            TarpError::NonFinite(_) => "non_finite",
            TarpError::NotBinary(_) => "not_binary",
            TarpError::DegenerateScreening => "degenerate_screening",
            TarpError::Numerical(_) => "numerical",
            TarpError::Replicate { .. } => "replicate",
            TarpError::Dataset { .. } => "dataset",
            TarpError::Config { .. } => "config",
            TarpError::Decode(_) => "decode",
            TarpError::Io { .. } => "io",
            TarpError::Csv(_) => "csv",
            TarpError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, TarpError>;
