use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame is not orthonormal: deviation {deviation:.3e}")]
    InvalidFrame { deviation: f64 },
    #[error("step left the chart domain at |x| = {radius:.6}")]
    ChartEscape { radius: f64 },
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("outside the supported regime: {0}")]
    Regime(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("manifold `{0}` has no oracle kernel")]
    UnsupportedManifold(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
