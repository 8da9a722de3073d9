use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("unknown behavior `{0}`")]
    UnknownBehavior(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("missing propagation plan `{0}`")]
    MissingPlan(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("zero-norm embedding row {row} in {view}")]
    ZeroNorm { view: &'static str, row: usize },
    #[error("stale encoding: built from parameter version {encoded}, current is {current}")]
    StaleSnapshot { encoded: u64, current: u64 },
    #[error("non-finite value in {component}: {detail}")]
    NonFinite { component: String, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::UnknownBehavior(_) => 2,
            Error::NonFinite { .. } | Error::ZeroNorm { .. } => 3,
            Error::Io(_) | Error::Parse { .. } | Error::EmptyInput(_) | Error::Checkpoint(_) => 4,
            Error::Json(_) => 4,
            _ => 3,
        }
    }
}
