use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Geometry that cannot produce a physical simulation (positions outside
    /// the room, coincident source and microphone, non-positive dimensions).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Inputs that are structurally valid but carry no usable signal
    /// (all-zero impulse responses, silent sources).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Bad configuration values or unknown enum tags.
    #[error("config error: {0}")]
    Config(String),

    /// Array shapes that do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Loss became non-finite during training. Carries the scene seeds of
    /// the offending batch so the failure can be replayed.
    #[error("non-finite loss at step {step}; batch scene seeds {batch_seeds:?}")]
    NanLoss { step: usize, batch_seeds: Vec<u64> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
