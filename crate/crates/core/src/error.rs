use thiserror::Error;

/// Errors raised by the modelling, simulation and rate computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoxqError {
    /// An argument lies outside the domain where the quantity is finite or defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    /// The query belongs to a different large-deviations regime than the one requested.
    #[error("wrong regime: {0}")]
    Regime(String),

    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    /// Expected work exceeds the configured event budget.
    #[error("resource budget exceeded: {0}")]
    Resource(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate query: {0}")]
    DegenerateQuery(String),

    #[error("numerical underflow: {0}")]
    NumericalUnderflow(String),
}

pub type Result<T> = std::result::Result<T, CoxqError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CoxqError {
    CoxqError::InvalidParameter(msg.into())
}

pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and > 0, got {value}")))
    }
}

pub(crate) fn require_nonnegative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and >= 0, got {value}")))
    }
}
