use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("metric is not symmetric positive definite: {0}")]
    InvalidMetric(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("grid too coarse: axis {axis} has {samples} samples, need at least {required}")]
    GridTooCoarse {
        axis: usize,
        samples: usize,
        required: usize,
    },

    #[error("ball of radius {radius} contains no grid points")]
    EmptyBall { radius: f64 },

    #[error("region mask is empty")]
    EmptyMask,

    #[error("exponent overflow: max |{exponent} * f| = {value} exceeds {limit}")]
    Overflow {
        exponent: f64,
        value: f64,
        limit: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("hypothesis budget invalid: {0}")]
    InvalidBudget(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("sequence spec invalid: {0}")]
    InvalidSpec(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
