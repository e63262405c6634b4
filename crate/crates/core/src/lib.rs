//! Minimizing-movement solver for the exponential thin-film equation
//! `u_t = Δ exp(−Δu)` with Neumann boundary conditions, plus the checks of
//! what the gradient-flow theory guarantees along its trajectories.

// `!(x > 0.0)` is how NaN gets rejected along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod exec;
pub mod flow;
pub mod cli;
pub mod grid;
pub mod presets;
pub mod prox;
pub mod verify;

pub use error::{Error, Result};
