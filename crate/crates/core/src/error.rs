use thiserror::Error;

use crate::design::DesignReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {got}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("matrix `{name}` is singular or ill-conditioned (condition number {condition:e})")]
    IllConditioned { name: String, condition: f64 },

    /// Some nonzero `h` has `|h|_K = 0` and `Λh = 0`; every recovery map has
    /// infinite worst-case error.
    #[error("irregular instance: nonzero direction invisible to both the model set and the observations")]
    Irregular { witness: Vec<f64> },

    #[error("the functional is not recoverable: the worst-case objective is infinite for every estimator")]
    Infeasible,

    #[error("solver stopped after {} iterations with duality gap {:e}", .0.iterations, .0.duality_gap)]
    NotConverged(Box<DesignReport>),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(field: &str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            field: field.to_string(),
            expected,
            got,
        }
    }
}
