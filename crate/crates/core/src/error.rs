use thiserror::Error;

/// Errors raised while constructing or evaluating tabular models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("invalid model: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("timestep {t} outside the valid range 0..={max}")]
    Timestep { t: usize, max: usize },

    #[error("support set error: {0}")]
    Support(String),

    #[error("{0}")]
    Format(String),
}

pub type Result<T, E = MdpError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(MdpError::Invalid(msg.into()))
}
