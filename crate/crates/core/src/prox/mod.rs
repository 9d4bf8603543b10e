//! Subproblem solvers used inside every engine iteration.
//!
//! All routines are pure and deterministic: identical inputs give bit-identical outputs.
//! Inner tolerances default to [`INNER_TOL`], a hundred times tighter than the default outer
//! ADMM tolerance, so inner inexactness does not dominate the outer stopping test.

mod ipm;
mod projections;
mod qp;
mod smooth;

pub use ipm::{solve_ineq_qp, InequalityQp, QpSolution};
pub use projections::{project_box, project_capped_simplexoid};
pub use qp::{solve_box_qp, solve_box_qp_from, solve_eq_qp, solve_projected_qp, EqQpFactor, QpSpec};
pub use smooth::{
    fd_gradient_error, minimize_smooth, minimize_smooth_projected, FnSmooth, SmoothSpec,
};

use crate::Matrix;
use thiserror::Error;

pub const INNER_TOL: f64 = 1e-8;
pub const INNER_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Error)]
pub enum ProxError {
    #[error("box bounds crossed at entry {index}: [{lower}, {upper}]")]
    CrossedBounds { index: usize, lower: f64, upper: f64 },
    #[error("capacity must be ≥ 0, got {0}")]
    NegativeCap(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    MaxIterExceeded { best: crate::Vector, residual: f64, iterations: usize },
    #[error("KKT system is singular: {0}")]
    SingularKkt(String),
    #[error("non-finite value encountered")]
    NonFiniteEncountered,
    #[error("problem is infeasible: {0}")]
    Infeasible(String),
    #[error("problem is unbounded below: {0}")]
    Unbounded(String),
    #[error("inconsistent smooth subproblem: {0}")]
    InvalidSpec(String),
    #[error("unsupported feasible set: {0}")]
    UnsupportedSet(String),
}

/// Number of singular values above `1e-10 · σ_max`.
pub fn numerical_rank(m: &Matrix) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * top).count()
}
