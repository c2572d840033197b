use thiserror::Error;

use crate::divergences::DivergenceKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{kind}: coordinate {index} = {value} lies outside the domain")]
    Domain {
        kind: DivergenceKind,
        index: usize,
        value: f64,
    },

    #[error("{kind}: simplex point sums to {sum}, expected 1")]
    OffSimplex { kind: DivergenceKind, sum: f64 },

    #[error("{kind}: dual coordinate {index} = {value} is outside the gradient range")]
    Range {
        kind: DivergenceKind,
        index: usize,
        value: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("classifier ensemble is empty")]
    EmptyEnsemble,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("analytic Hessian blocks are only available for kl and gen-i, not {0}")]
    UnsupportedDivergence(DivergenceKind),

    #[error("copies are distinct but their divergence sum {0:e} is too small to divide by")]
    DivisionDegenerate(f64),

    #[error("need at least {needed} snapshots, got {got}")]
    InsufficientTrace { needed: usize, got: usize },

    #[error("class {0} has no training points")]
    MissingClass(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
