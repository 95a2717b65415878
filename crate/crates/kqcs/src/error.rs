//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions of an input do not match what the operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A parameter is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A file exists but its contents violate the documented format.
    #[error("malformed file: {0}")]
    MalformedFile(String),
    /// An operation that is well-defined only for a subset of inputs was
    /// called outside that subset (e.g. line masks on 3D grids).
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A numeric routine produced NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// The solver objective became non-finite (bad stepsize or bad data).
    #[error("non-finite objective at iteration {iter}")]
    NonFiniteObjective { iter: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
