use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("empty state list")]
    EmptyStates,
    #[error("unsupported dimension {0}: the interferometer tree needs a power of two")]
    UnsupportedDimension(usize),
    #[error("phase states do not map one-to-one onto detectors: {0}")]
    DegenerateMap(String),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("fixed point did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("empty block: {0}")]
    EmptyBlock(&'static str),
    #[error("infeasible security budget: {0}")]
    InfeasibleBudget(String),
    #[error("malformed matrix: {0}")]
    MalformedMatrix(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
