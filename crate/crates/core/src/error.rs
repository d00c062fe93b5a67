//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(
        "{path}: {bad} of {total} lines malformed, over the 10% budget; first bad line {first_line}: {first_msg}"
    )]
    TooManyMalformed {
        path: PathBuf,
        bad: usize,
        total: usize,
        first_line: usize,
        first_msg: String,
    },

    #[error("point ({lat}, {lon}) lies outside the study area")]
    OutOfArea { lat: f64, lon: f64 },

    #[error("training set for {context} contains a single class")]
    DegenerateLabels { context: String },

    #[error("cannot build {folds} stratified folds from {pos} positive / {neg} negative examples")]
    DegenerateFolds { folds: usize, pos: usize, neg: usize },

    #[error("trace for {user} has no observations")]
    EmptyTrace { user: String },

    #[error("PageRank did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("correlation undefined: {reason}")]
    UndefinedCorrelation { reason: String },

    #[error("invalid model file {path}: {msg}")]
    InvalidModel { path: PathBuf, msg: String },

    #[error("configuration error: {msg}")]
    Config { msg: String },
}

impl Error {
    /// Process exit code for this error: 1 for usage/config mistakes, 2 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
