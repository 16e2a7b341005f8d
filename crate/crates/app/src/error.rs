use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] chartforge_core::Error),
    #[error(transparent)]
    Nn(#[from] chartforge_nn::Error),
    #[error(transparent)]
    Eval(#[from] chartforge_eval::Error),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("mesh does not match the template connectivity: {0}")]
    Connectivity(String),
    #[error("no model is loaded: {0}")]
    ModelNotLoaded(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Core(e) => e.code(),
            Error::Nn(e) => e.code(),
            Error::Eval(e) => e.code(),
            Error::Range(_) => "RangeError",
            Error::Connectivity(_) => "ConnectivityError",
            Error::ModelNotLoaded(_) => "ModelNotLoaded",
            Error::UnknownAttribute(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "ParseError",
        }
    }

    /// Whether the failure comes from bad input or configuration rather than
    /// from the computation itself.
    pub fn is_config(&self) -> bool {
        matches!(
            self.code(),
            "ConfigError" | "ParseError" | "RangeError" | "ConnectivityError" | "RankError" | "ShapeError"
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
