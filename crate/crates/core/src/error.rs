use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solver and its supporting machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sparsity too high for sizing rule: 2s = {two_s} >= n = {n}")]
    SparsityTooHigh { two_s: usize, n: usize },
    #[error("instance too large for brute force: {subsets} subsets exceed cap {cap}")]
    EnumerationCap { subsets: u128, cap: u128 },
    #[error("non-finite residual at interpolation point {index}")]
    NonFiniteInterpolation { index: usize },
    #[error("non-finite residual at {0}")]
    NonFiniteResidual(String),
    #[error("sparse recovery infeasible for row {row}")]
    Infeasible { row: usize },
    #[error("linear solve failed: {0}")]
    Factorization(String),
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("problem `{0}` is already registered")]
    DuplicateProblem(String),
    #[error("problem `{name}` rejected: {reason}")]
    InvalidProblem { name: String, reason: String },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
