use thiserror::Error;

use crate::equilibrium::SolverTrace;

pub type Result<T> = std::result::Result<T, DeqError>;

#[derive(Debug, Clone, Error)]
pub enum DeqError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{what} diverged after {} steps (residual {residual:.3e})", trace.steps_taken)]
    Divergence {
        what: &'static str,
        residual: f64,
        trace: SolverTrace,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training aborted at epoch {epoch}, step {step}: {reason}")]
    TrainingAborted {
        epoch: usize,
        step: usize,
        reason: String,
    },
}

impl DeqError {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        DeqError::Shape { op, lhs, rhs }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DeqError::Config(msg.into())
    }
}
