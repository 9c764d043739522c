//! Library error type.

/// Errors raised by constructors and solvers.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("invalid claim: {0}")]
    InvalidClaim(String),
    #[error("invalid loss specification: {0}")]
    InvalidLoss(String),
    #[error("the positive-cone acceptance set has no pointwise loss function")]
    StrictConeLoss,
    #[error("objective is unbounded below (non-coercive loss): {0}")]
    NonCoercive(String),
    #[error("size guard exceeded: {0}")]
    GuardExceeded(String),
    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
