use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mode count mismatch: {0} vs {1}")]
    ModeMismatch(usize, usize),
    #[error("operands use different unit systems or backends")]
    BackendMismatch,
    #[error("value not representable in the exact unit system: {0}")]
    NotRepresentable(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("outcome inconsistent with the stabilizer state: {0}")]
    Inconsistent(String),
    #[error("singular or ill-conditioned matrix: {0}")]
    Singular(String),
    #[error("float phases could not be rationalized within tolerance")]
    Incommensurate,
    #[error("float precision exhausted: {0}")]
    IllConditioned(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("sampling failed after {0} attempts: {1}")]
    SamplingFailed(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
