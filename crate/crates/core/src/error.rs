use thiserror::Error;

/// Errors raised by the analysis and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An analytic test was asked to run outside its domain (e.g. a
    /// nonpositive effective gain). Callers report this as "not applicable".
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("map evaluation produced non-finite value {value} at sigma = {sigma}")]
    Evaluation { sigma: f64, value: f64 },

    /// Species and compartment indices are 1-based.
    #[error("simulation diverged at t = {t} (species {species}, compartment {compartment})")]
    Divergence {
        t: f64,
        species: usize,
        compartment: usize,
    },

    #[error("gain ratio undefined: input deviation norm is zero on the horizon")]
    UndefinedRatio,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
