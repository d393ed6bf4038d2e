use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model validation failed with {} violation(s): {}", .0.len(), join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("infeasible interval box: {0}")]
    InfeasibleBox(String),

    #[error("vertex list is empty")]
    EmptyVertexList,

    #[error("support of size {size} exceeds the enumeration limit of {limit}")]
    SupportTooLarge { size: usize, limit: usize },

    #[error("selector {selector} is undefined for the {variant} variant")]
    SelectorUndefined {
        selector: &'static str,
        variant: &'static str,
    },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("iteration diverged at step {iteration}: |w|_inf = {norm:e}")]
    Divergence { iteration: usize, norm: f64 },

    #[error("ARPI inner loop failed at outer iteration {outer}: {source}")]
    InnerFailure {
        outer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rank-deficient Gram matrix (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("policy iteration did not stabilise within {0} improvements")]
    PolicyCycle(usize),

    #[error("exploration kernel is not ergodic: {0}")]
    NotErgodic(String),

    #[error("exploration kernel is improper: {0}")]
    ImproperKernel(String),

    #[error("state {0} is never visited under the exploration kernel")]
    UnreachableState(usize),

    #[error("price data error at index {index}: ratio {ratio} matches neither factor")]
    PriceData { index: usize, ratio: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::PolicyCycle(_) => 3,
            Error::Divergence { .. } => 4,
            Error::InnerFailure { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Csv(_) => 1,
            _ => 2,
        }
    }
}
