//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    /// Nearest-neighbor query against an empty spatial index.
    #[error("empty index")]
    EmptyIndex,
    /// No jointly valid pixels between two masked maps.
    #[error("disjoint masks")]
    DisjointMasks,
    #[error("no valid pixels")]
    NoValidPixels,
    /// Scale estimation against an all-zero prediction.
    #[error("degenerate prediction")]
    DegeneratePrediction,
    /// Point configuration too thin for a unique similarity fit.
    #[error("degenerate configuration")]
    DegenerateConfiguration,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty point set")]
    EmptyPointSet,
    #[error("need at least {needed} poses, got {got}")]
    InsufficientPoses { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid tensor file: {0}")]
    TensorFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
