use thiserror::Error;

use crate::dynamics::TrainingTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition of an operation was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Argument outside the mathematical domain of a kernel primitive.
    #[error("domain error: {0}")]
    Domain(String),

    /// Training produced a non-finite loss. The trace holds every record
    /// collected before the abort.
    #[error("training diverged numerically at epoch {epoch} (loss = {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        trace: Box<TrainingTrace>,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
