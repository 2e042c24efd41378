use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point fell outside the problem's box domain.
    #[error("point {point:?} is outside the domain")]
    Domain { point: Vec<f64> },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Covariance assembly or hyperparameter search could not produce a
    /// positive definite model.
    #[error("model fitting failed: {0}")]
    Fitting(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
