use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("generator must be square, got {rows}x{cols}")]
    NonSquareGenerator { rows: usize, cols: usize },

    #[error("generator row {row} sums to {residual:e}, expected 0")]
    RowSumViolation { row: usize, residual: f64 },

    #[error("generator entry ({row},{col}) = {value} is a negative off-diagonal rate")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("matrix exponential argument too large (1-norm {norm:e} > 1e4)")]
    Overflow { norm: f64 },

    #[error(
        "fundamental matrix entry exceeded 1e300 at step {step}; use a shorter horizon or the renormalized filter"
    )]
    FundamentalOverflow { step: usize },

    #[error("brute-force closure budget exceeded ({generated} vectors)")]
    BudgetExceeded { generated: usize },

    #[error("observation rows {0} and {1} coincide; no collapse vector exists")]
    NotInjective(usize, usize),

    #[error("no collapse vector found after {0} random draws")]
    CollapseSearchFailed(usize),

    #[error("filter mass {mass:e} fell below 1e-300 at step {step}")]
    DegenerateMass { step: usize, mass: f64 },

    #[error("negativity clamps in {events} of {steps} steps exceed the 0.1% budget")]
    ExcessiveClamping { events: usize, steps: usize },

    #[error("zero mass at grid point {0}")]
    ZeroMass(usize),

    #[error(
        "regression Gram matrix condition {condition:e} exceeds 1e12 at step {step}; increase ridge or drop features"
    )]
    SingularRegression { step: usize, condition: f64 },

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
