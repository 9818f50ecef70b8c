use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A named precondition of an operation does not hold. `name` is stable
    /// and is what the CLI reports back to the user.
    #[error("precondition `{name}` violated: {detail}")]
    Precondition { name: &'static str, detail: String },

    #[error("lambda must be strictly positive to build a weighting scheme (all weights vanish at lambda = 0)")]
    ZeroLambda,

    #[error("the l1 regularizer is non-smooth; only the proximal solver accepts it")]
    NonSmooth,

    #[error("{0} is not supported for this problem")]
    Unsupported(&'static str),

    #[error("singular system: {0}")]
    Singular(String),

    #[error(
        "iterates diverged at step {step} (norm {norm:e}); the learning rate is likely too large"
    )]
    Diverged { step: usize, norm: f64 },

    #[error("no convergence within {0} iterations")]
    NoConvergence(usize),

    #[error("out-of-order update: expected index {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },

    #[error("parse error at byte offset {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("{}: {source}", path.display())]
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

impl Error {
    pub fn precondition(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Precondition {
            name,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
