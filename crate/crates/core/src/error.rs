use thiserror::Error;

/// Errors raised by the simulator and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate design: smallest eigenvalue {lambda_min:e} of the empirical covariance is numerically zero")]
    DegenerateDesign { lambda_min: f64 },

    #[error("requires strong quasi-convexity (mu > 0), got mu = {0}")]
    RequiresStrongConvexity(f64),

    #[error("configuration rejected: {0}")]
    ConfigurationRejected(String),

    #[error("run diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: u64, reason: String },

    #[error("cannot fit rate: {0}")]
    CannotFit(String),

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
