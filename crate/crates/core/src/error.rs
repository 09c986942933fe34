use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("{context}: matrix is not Hermitian positive definite")]
    NotPositiveDefinite { context: &'static str },

    #[error("{context}: matrix is singular")]
    Singular { context: &'static str },

    #[error("deterministic-equivalent iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    DeNotConverged { iterations: usize, residual: f64 },

    #[error("backtracking line search failed after {doublings} step-size doublings")]
    LineSearch { doublings: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(
        context: &'static str,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
