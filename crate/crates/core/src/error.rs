use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// The one-stage or policy problem has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The solver stopped without a certificate of optimality.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("cut index {got} does not match the next free index {expected}")]
    CutIndex { expected: usize, got: usize },

    #[error("did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
