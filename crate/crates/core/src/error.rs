use thiserror::Error;

/// Error type shared by every module in the toolkit.
#[derive(Debug, Error)]
pub enum FpmError {
    /// Physically inconsistent setup parameters (pupil exceeding the grid,
    /// crop window out of bounds, invalid NA, ...).
    #[error("geometry: {0}")]
    Geometry(String),

    /// Array dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// LED (or similar) index outside the configured range.
    #[error("index out of range: {0}")]
    Index(String),

    /// Malformed on-disk data: bad magic, version, truncation, inconsistent sidecar.
    #[error("format: {0}")]
    Format(String),

    /// Numerical failure: divergence, NaN loss, degenerate (all-zero) data.
    #[error("numerical: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FpmError>;
