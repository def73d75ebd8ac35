use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid hazard series or arm model.
    #[error("invalid hazard: {0}")]
    Hazard(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// MAP estimate does not exist under a flat prior.
    #[error(
        "posterior mode is unbounded: arm {arm} has no observed infections; use a prior precision lambda > 0"
    )]
    Unbounded { arm: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("exact tie likelihood refused: {0}")]
    SizeGuard(String),

    #[error("no arm has any assigned participants")]
    NoAssignments,

    #[error("{path}: {source}")]
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

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 1 for configuration problems, 2 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Hazard(_) | Error::Config(_) | Error::Json(_) | Error::Csv(_) => 1,
            _ => 2,
        }
    }
}
