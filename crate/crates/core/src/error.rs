use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An iterative solve ran out of iterations. `history` holds the
    /// residual (or update) norm after each iteration.
    #[error("{solver} did not converge in {iters} iterations (last norm {last:.3e})")]
    NonConvergence {
        solver: &'static str,
        iters: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("total ion charge must be positive, got {total}")]
    NonPositiveCharge { total: f64 },

    #[error("potential does not solve the field equation at the current positions (residual {residual:.3e} > {threshold:.3e})")]
    StalePotential { residual: f64, threshold: f64 },

    #[error("no root of the dispersion relation found")]
    NoRoot,

    #[error("particle ensemble has no weight")]
    EmptyEnsemble,

    #[error("not enough data points to fit a rate ({found} usable, need {needed})")]
    InsufficientData { found: usize, needed: usize },

    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: key '{key}': {message}")]
    Parse {
        line: usize,
        key: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::StalePotential { .. } | Error::NoRoot => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
