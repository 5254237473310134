use std::time::Duration;

use thiserror::Error;

/// Errors raised anywhere in the federation, screening and solving stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The problem has no meaningful solution path (e.g. `A^T y = 0`).
    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("worker {worker} did not reply to round {round} within {timeout:?}")]
    Timeout {
        worker: usize,
        round: u64,
        timeout: Duration,
    },

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    /// Objective blew up; a smaller step (backtracking) is needed.
    #[error("step size too large: {0}; retry with backtracking step rule")]
    StepSize(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Coarse category, used by the CLI to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dimension(_)
            | Error::Config(_)
            | Error::Degenerate(_)
            | Error::EmptyDataset(_) => ErrorCategory::Config,
            Error::Protocol(_) | Error::Timeout { .. } => ErrorCategory::Protocol,
            Error::Numeric(_) | Error::NotConverged(_) | Error::StepSize(_) => {
                ErrorCategory::Solver
            }
            Error::Format(_) | Error::Io(_) => ErrorCategory::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Protocol,
    Solver,
    Io,
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
