use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure reported by a model backend.
///
/// Transport failures are retryable and kept apart from contract violations so
/// callers (and the CLI exit codes) can tell them apart.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend transport failure: {0}")]
    Transport(String),
    #[error("backend contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("invalid dimensions {0}x{1}")]
    InvalidDimensions(u32, u32),
    #[error("timestep order violated: start {start}, end {end}, total {total}")]
    TimestepOrder { start: u32, end: u32, total: u32 },
    #[error("timestep mismatch: {0} vs {1}")]
    TimestepMismatch(u32, u32),
    #[error("timestep {0} out of range 0..={1}")]
    TimestepOutOfRange(u32, u32),
    #[error("invalid decoder layer index {0} (expected 1..=4)")]
    InvalidLayer(u32),
    #[error("decoder features unavailable at timestep {timestep} of {total}")]
    FeaturesUnavailable { timestep: u32, total: u32 },
    #[error("overlap ratio undefined for an empty cluster")]
    UndefinedRatio,
    #[error("empty mask: {0}")]
    EmptyMask(&'static str),
    #[error("query resolution failed: {0}")]
    QueryResolution(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("occlusion band [{lo}, {hi}] not reached after {attempts} placements")]
    BandUnachievable { lo: f64, hi: f64, attempts: u32 },
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("image codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Backend(BackendError::Transport(_)))
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Codec(e.to_string())
    }
}
