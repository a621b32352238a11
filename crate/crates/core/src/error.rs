use thiserror::Error;

/// Errors raised by the denoising and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaldError {
    /// A parameter or flag combination that can never succeed.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a precondition (non-finite values, bad M0, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("coordinate ({row}, {col}) out of bounds for {height}x{width} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    /// Noise-curve estimation could not produce a curve.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A plug-in component broke its contract (e.g. changed the shape).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = BaldError> = std::result::Result<T, E>;
