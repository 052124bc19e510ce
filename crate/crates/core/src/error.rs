use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the fusion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e}); repair it with nearest_correlation first")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("calibration failed for annotator `{annotator}`: {reason}")]
    Calibration { annotator: String, reason: String },

    #[error("degenerate 2x2 table{context}: {reason}")]
    DegenerateTable { context: String, reason: String },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("bootstrap iteration {iteration} failed {attempts} consecutive times: {last}")]
    BootstrapExhausted {
        iteration: usize,
        attempts: usize,
        last: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
