use thiserror::Error;

/// Errors raised by the geometry and chart pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("no simple cut path: {0}")]
    Path(String),

    #[error("cannot stitch cover: {0}")]
    Stitch(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("embedding has {0} flipped triangles")]
    Foldover(usize),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("degenerate 1-ring at vertex {0}")]
    ZeroArea(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("chart {0} has vanishing RMS")]
    DegenerateChart(usize),

    #[error("landmark structure is not scale-translation rigid: {0}")]
    Rank(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable error code, stable across versions.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::Topology(_) => "TopologyError",
            Error::Path(_) => "PathError",
            Error::Stitch(_) => "StitchError",
            Error::Solve(_) => "SolveError",
            Error::Foldover(_) => "FoldoverError",
            Error::Coverage(_) => "CoverageError",
            Error::ZeroArea(_) => "ZeroAreaError",
            Error::Shape(_) => "ShapeError",
            Error::DegenerateChart(_) => "DegenerateChartError",
            Error::Rank(_) => "RankError",
            Error::Format { .. } => "FormatError",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "ParseError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
