use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("radius exceeds class: {0}")]
    RadiusExceedsClass(String),

    #[error("bisection did not converge after {0} steps")]
    NoConvergence(usize),

    #[error("frequency band {needed} exceeds the supported maximum {max}")]
    BandTooLarge { needed: usize, max: usize },

    #[error("band mismatch: weights need |k| <= {needed}, data covers |k| <= {available}")]
    BandMismatch { needed: usize, available: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("enumeration budget exceeded: {needed} supports > budget {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("target detection value {0} is unreachable")]
    Unreachable(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures caused by the scenario itself rather than by malformed input.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::RadiusExceedsClass(_)
                | Error::NoConvergence(_)
                | Error::BandTooLarge { .. }
                | Error::BudgetExceeded { .. }
                | Error::Unreachable(_)
        )
    }
}
