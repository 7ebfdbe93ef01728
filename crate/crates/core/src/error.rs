use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("solution places object point {index} behind the camera (z = {depth:.6})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("ring split left bin {0} empty")]
    RingAmbiguity(usize),

    #[error("no board found (best registration error {best_error:.4} m)")]
    NoBoardFound { best_error: f64 },

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate board poses: {0}")]
    DegeneratePoses(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
