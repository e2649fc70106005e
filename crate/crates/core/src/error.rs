use thiserror::Error;

/// Errors raised by the estimation, simulation and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AfmError {
    #[error("invalid basis dimension {0}: a cubic spline basis needs at least 4 functions")]
    InvalidDimension(usize),

    #[error("point {0} lies outside [0, 1]; splines are not extrapolated")]
    Domain(f64),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("column {column} is not a permutation of the grid {{1/(T+1), ..., T/(T+1)}}")]
    InvalidFactors { column: usize },

    #[error("number of factors q = {q} must be at least 1 and smaller than the number of series N = {n}")]
    InvalidRank { q: usize, n: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("normal equations are singular (rank-deficient design); use a positive ridge")]
    Singular,

    #[error("loss became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("AR coefficient {0} is not stationary (|theta| must be < 1)")]
    Nonstationary(f64),

    #[error("alignment undefined: column {column} of the {which} factors is constant")]
    DegenerateColumn { which: &'static str, column: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(&'static str),

    #[error("transform produced a non-finite value at probability {0}")]
    Transform(f64),

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, AfmError>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> AfmError {
    AfmError::Shape {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
