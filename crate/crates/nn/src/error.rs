use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] chartforge_core::Error),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("too few samples for covariance: {0}")]
    SingularStats(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable name used by the CLI and the service.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Core(e) => e.code(),
            Error::Shape(_) => "ShapeError",
            Error::Rank(_) => "RankError",
            Error::Config(_) => "ConfigError",
            Error::Divergence(_) => "DivergenceError",
            Error::Dimension(_) => "DimensionError",
            Error::SingularStats(_) => "SingularStatsError",
            Error::Format(_) => "FormatError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "ParseError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
