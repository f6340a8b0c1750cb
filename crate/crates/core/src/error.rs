use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh refinement required: {0}")]
    RefinementRequired(String),

    #[error("unreachable: {0}")]
    Unreachable(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: row {row}: {message}")]
    Validation {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("element {element}: {message}")]
    Assembly { element: usize, message: String },

    /// Carries the best iterate so callers can decide whether it is usable.
    #[error("GMRES did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("simulation diverged at step {step} (t = {time} ms): {message}")]
    Diverged {
        step: usize,
        time: f64,
        message: String,
    },

    #[error("linear solve failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration iteration {iteration}: {source}")]
    Calibration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
