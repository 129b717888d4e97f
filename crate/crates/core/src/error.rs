use alloc::string::String;

/// Errors raised by the solvers, oracles and evaluators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    /// A non-finite gradient or iterate showed up inside a loop.
    #[error("divergence at round {round:?}, inner iteration {iteration}")]
    Divergence {
        round: Option<usize>,
        iteration: usize,
    },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Attaches the outer round to a divergence error raised by an inner loop.
    pub fn at_round(self, t: usize) -> Self {
        match self {
            Error::Divergence { iteration, .. } => Error::Divergence {
                round: Some(t),
                iteration,
            },
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
