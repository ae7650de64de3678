use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel is singular: evaluation points coincide")]
    SingularKernel,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dense expansion of n={n} exceeds the limit of {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("missing basis for cluster {cluster}, direction {direction}")]
    MissingBasis { cluster: usize, direction: usize },
    #[error("malformed point file, line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
