use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] chartforge_core::Error),
    #[error(transparent)]
    Nn(#[from] chartforge_nn::Error),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("too few samples for covariance: {0}")]
    SingularStats(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Core(e) => e.code(),
            Error::Nn(e) => e.code(),
            Error::Dimension(_) => "DimensionError",
            Error::SingularStats(_) => "SingularStatsError",
            Error::Shape(_) => "ShapeError",
            Error::Divergence(_) => "DivergenceError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
