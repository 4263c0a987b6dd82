use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("matrix is rank deficient (smallest/largest singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("no ground truth attached to this problem")]
    MissingGroundTruth,

    #[error("finite differences disagree: {first:.6e} vs {second:.6e}")]
    FdInconsistent { first: f64, second: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the caller's configuration rather than the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidDimension(_) | Error::Io(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
