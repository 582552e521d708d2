use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by workload construction, configuration and scheduling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset statistics: {0}")]
    InvalidStats(String),

    #[error("invalid trace spec: {0}")]
    InvalidTraceSpec(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("request {id}: invalid field `{field}`: {msg}")]
    Validation {
        id: u64,
        field: &'static str,
        msg: String,
    },

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("deadline not defined for {class} request {id}")]
    WrongClass { id: u64, class: &'static str },

    #[error("token index must be >= 1")]
    TokenIndex,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity must be positive, got {0}")]
    ZeroCapacity(f64),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 3 for invariant breaches, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
