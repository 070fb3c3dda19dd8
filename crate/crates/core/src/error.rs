use std::io;

use thiserror::Error;

use crate::trainer::TrainLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: timestamp {timestamp} does not increase (previous {previous})")]
    Ordering {
        line: usize,
        timestamp: i64,
        previous: i64,
    },

    #[error("series has no valid samples")]
    EmptySeries,

    #[error("series is degenerate: standard deviation {0:e} is too small to normalize")]
    DegenerateSeries(f64),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("sample {0} is not covered by any window")]
    Coverage(usize),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("synthetic spec cannot be satisfied: {0}")]
    Spec(String),

    #[error("checkpoint array `{array}`: {message}")]
    Checkpoint { array: String, message: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("training diverged after {} epochs: {reason}", log.records.len())]
    Divergence { reason: String, log: Box<TrainLog> },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Spec(_) => ErrorCategory::Config,
            Error::Numeric(_) | Error::Divergence { .. } | Error::UndefinedCorrelation(_) => {
                ErrorCategory::Numeric
            }
            Error::Io(_) => ErrorCategory::Io,
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }

    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric(message.into())
    }
}
