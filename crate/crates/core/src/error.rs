use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation (bad curvature, odd
    /// dimension, out-of-range id, length mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical breakdown: vanishing denominator, overflow, non-finite
    /// intermediate.
    #[error("numeric error in {stage}: {detail}")]
    Numeric { stage: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown {kind} `{name}`")]
    UnknownSymbol { kind: &'static str, name: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset statistics mismatch:\n{0}")]
    StatsMismatch(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric {
            stage,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
