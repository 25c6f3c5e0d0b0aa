use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structurally invalid argument (sizes, indices, ranges).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical invariant was violated during computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("conditional probability undefined: survival at k={k} is zero")]
    UndefinedConditional { k: usize },

    /// Successive solutions coincide to machine precision, so no rate can be formed.
    #[error("convergence rate undefined: {0}")]
    RateUndefined(String),

    #[error("threshold calibration failed: {0}")]
    Calibration(String),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Argument(_) => "argument",
            Error::Numeric(_) => "numeric",
            Error::UndefinedConditional { .. } => "undefined_conditional",
            Error::RateUndefined(_) => "rate_undefined",
            Error::Calibration(_) => "calibration",
        }
    }
}
