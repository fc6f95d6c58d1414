use thiserror::Error;

use crate::training::StepRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    Convergence { sweeps: usize, off_norm: f64 },

    #[error("matrix size {size} exceeds limit {limit} for {op}")]
    SizeLimit {
        op: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("matrix is not symmetric enough for {op}: asymmetry {asymmetry:e}")]
    Asymmetric { op: &'static str, asymmetry: f64 },

    #[error("monte-carlo evaluation required for non-linear student")]
    Mode,

    #[error("training diverged at step {step} (loss {loss:e})")]
    Diverged {
        step: usize,
        loss: f64,
        last: Option<StepRecord>,
        trajectory: Vec<StepRecord>,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
