use thiserror::Error;

/// Errors shared across the identification pipeline.
#[derive(Debug, Error)]
pub enum IdentError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{context}: all values must be finite")]
    NonFinite { context: String },

    #[error("{context}: need at least {needed} points along {axis}, got {got}")]
    TooFewPoints {
        context: &'static str,
        axis: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("downsample factor {factor} leaves fewer than 2 points along {axis} (size {size})")]
    DownsampleTooCoarse {
        axis: &'static str,
        factor: usize,
        size: usize,
    },

    #[error("rank-deficient least-squares system; dependent columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("support-recovery condition violated: {0}")]
    RecoveryCondition(String),

    #[error("candidate set of size {got} exceeds the subset-search cap {cap}; raise the threshold")]
    TooManyCandidates { got: usize, cap: usize },

    #[error("explicit scheme unstable: {0}")]
    Unstable(String),

    #[error("characteristic solve failed at x={x}, t={t}: {reason}")]
    CharacteristicSolve { x: f64, t: f64, reason: String },

    #[error("feature {0} has no dictionary definition; cannot evolve the model")]
    NonDictionaryFeature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IdentError>;
