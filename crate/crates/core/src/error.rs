use thiserror::Error;

/// Errors raised by the measure, kernel, solver and checker layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("degenerate potential: {0}")]
    DegeneratePotential(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("support mismatch: {0}")]
    Support(String),

    #[error("infeasible coupling problem: {0}")]
    Infeasible(String),

    #[error("solver did not converge: {0}")]
    Unconverged(String),

    #[error("problem too large: {0}")]
    Size(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
