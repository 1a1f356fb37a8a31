use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit: {what} (expected size {expected:.3e}, limit {limit:.3e})")]
    ResourceLimit { what: String, expected: f64, limit: f64 },

    #[error("rejection budget exhausted after {attempts} attempts (running acceptance estimate {acceptance:.4e})")]
    RejectionBudget { attempts: u64, acceptance: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// `Err(InvalidArgument)` unless `cond` holds.
pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}
