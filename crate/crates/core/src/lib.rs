//! Block-structured convex optimization with multi-block ADMM.
//!
//! The crate is organised bottom-up:
//!
//! - [`problem`]: the canonical N-block problem `min Σ f_i(x_i) s.t. Σ A_i x_i = c, x_i ∈ X_i`,
//!   its objective/set vocabulary and residual evaluation.
//! - [`prox`]: subproblem solvers (projections, box/equality/inequality QPs, smooth minimization).
//! - [`engines`]: two-block, Gauss-Seidel, Jacobi, variable-splitting, Gaussian back
//!   substitution and proximal Jacobi ADMM behind one run interface.
//! - [`dist`]: a lock-step coordinator/worker message-passing simulator for the
//!   Jacobi-family engines.
//! - [`scopf`]: DC security-constrained optimal power flow decomposition.
//! - [`offload`]: SDN mobile data offloading with base-station/access-point/controller updates.
//! - [`fixtures`]: bundled instances used by the CLI and the test suites.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod engines;
pub mod fixtures;
pub mod offload;
pub mod problem;
pub mod prox;
pub mod scopf;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

pub use engines::{
    ConvergenceReport, IterationRecord, IterationTrace, Prox, RunOutcome, SolverConfig, Status,
};
pub use problem::{BlockProblem, BlockSpec, BlockVector, FeasibleSet, ObjectiveTerm};
