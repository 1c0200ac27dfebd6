use thiserror::Error;

/// Errors raised by model construction, simulation, detection and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid specification: {0}")]
    Validation(String),

    #[error("unsupported family pair: {0}")]
    UnsupportedPair(String),

    #[error("model is not admissible: {0}")]
    Inadmissible(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("grid alignment: {0}")]
    Alignment(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {message} (residual estimate {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("degenerate estimate: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable category, used by the CLI for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Validation(_) | Error::UnsupportedPair(_) | Error::Alignment(_) => "config",
            Error::Inadmissible(_) => "inadmissible",
            Error::Numerical { .. } | Error::Degenerate(_) => "numerical",
            Error::Domain(_) | Error::Contract(_) | Error::Infeasible(_) => "usage",
        }
    }
}
