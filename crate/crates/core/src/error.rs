use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series diverges: {0}")]
    Divergent(String),

    #[error("covariance is not positive definite (min circulant eigenvalue {min_eigenvalue:e}, cholesky failed)")]
    EmbeddingFailure { min_eigenvalue: f64 },

    #[error("function is constant: no nonzero Hermite coefficient")]
    ConstantFunction,

    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("no Gaussian normalization exists in the supercritical regime")]
    NoGaussianNormalizer,

    #[error("sequence is not jointly Gaussian")]
    NonGaussian,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
