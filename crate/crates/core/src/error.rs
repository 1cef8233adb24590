use thiserror::Error;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field evaluation failed: {0}")]
    Evaluation(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate point: det of horizontal gradient is {det:e}")]
    DegeneratePoint { det: f64 },

    #[error("no admissible radii: {0}")]
    NoAdmissibleRadii(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (delta = {delta:e}, last change = {change:e})")]
    NonConvergence {
        iterations: usize,
        delta: f64,
        change: f64,
    },

    #[error("no parameter found: {0}")]
    NotFound(String),

    #[error("point is off the curve (distance {distance:e} to nearest node)")]
    PointOffCurve { distance: f64 },

    #[error("no level-set seed found for target ({0}, {1})")]
    SeedNotFound(f64, f64),
}

pub type Result<T> = std::result::Result<T, Error>;
