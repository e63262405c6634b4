use thiserror::Error;

use crate::flow::FlowTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field does not match grid: expected {expected} cells, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value at cell {0}")]
    NonFinite(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("Newton solver did not converge at step {step} (gradient norm {grad_norm:e})")]
    NonConvergence {
        step: usize,
        grad_norm: f64,
        trace: Box<FlowTrace>,
    },

    #[error("measure bound violated at step {step}: |Lu| = {total:e} > C* = {c_star:e}")]
    MeasureBound {
        step: usize,
        total: f64,
        c_star: f64,
        trace: Box<FlowTrace>,
    },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
