use thiserror::Error;

use crate::data::DataError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or settings that cannot describe a valid network or run.
    #[error("configuration error: {0}")]
    Config(String),

    /// Data handed to an operation violates its preconditions.
    #[error("input error: {0}")]
    Input(String),

    /// The loss became NaN or infinite; `row` is the offending sample within the batch.
    #[error("numerical failure: non-finite loss at batch row {row}")]
    NonFiniteLoss { row: usize },

    /// Training diverged. Epochs are counted from 1.
    #[error("training diverged in epoch {epoch} (step {step})")]
    Diverged { epoch: usize, step: usize },

    #[error(transparent)]
    Data(#[from] DataError),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True for failures caused by non-finite arithmetic.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::Diverged { .. })
    }
}
