//! The multi-block ADMM engines behind one run interface.
//!
//! Every engine works with the augmented Lagrangian
//!
//! ```text
//!   L_ρ(x, λ) = Σ f_i(x_i) − λᵀ(Σ A_i x_i − c) + ρ/2 ‖Σ A_i x_i − c‖²
//! ```
//!
//! and returns a [`RunOutcome`] holding the per-iteration [`IterationTrace`] and the final
//! [`ConvergenceReport`]. Record `k` (0-based) describes the iterate produced by iteration
//! `k`, i.e. `x^{k+1}` in the usual notation.

mod config;
mod driver;
mod gbs;
mod jacobi;
mod sequential;
mod splitting;
mod subproblem;
mod trace;

pub use config::{Prox, SolverConfig};
pub use driver::{Aux, IterationView, Observer};
pub use gbs::{build_correction_matrices, run_gbs, CorrectionMatrices};
pub use jacobi::{run_jacobi, run_prox_jacobi};
pub use sequential::{run_gauss_seidel, run_two_block};
pub use splitting::run_variable_splitting;
pub use trace::{ConvergenceReport, IterationRecord, IterationTrace, RunOutcome, Status};

pub(crate) use driver::{drive, Protocol, Rounds, StepMetrics};
pub(crate) use jacobi::JacobiProtocol;
pub(crate) use splitting::SplittingProtocol;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::problem::{BlockProblem, ProblemError};
use crate::prox::ProxError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("block {block}: no subproblem solver for this objective/set combination ({reason})")]
    UnsupportedSubproblem { block: usize, reason: String },
    #[error("block {0}: A_iᵀA_i is singular")]
    SingularBlock(usize),
    #[error("block {block}: subproblem failed: {source}")]
    Subproblem { block: usize, source: ProxError },
    #[error("observer aborted the run: {0}")]
    ObserverFailure(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// The six engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineKind {
    TwoBlock,
    GaussSeidel,
    Jacobi,
    VariableSplitting,
    Gbs,
    ProxJacobi,
}

impl EngineKind {
    pub const ALL: [EngineKind; 6] = [
        EngineKind::TwoBlock,
        EngineKind::GaussSeidel,
        EngineKind::Jacobi,
        EngineKind::VariableSplitting,
        EngineKind::Gbs,
        EngineKind::ProxJacobi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::TwoBlock => "two-block",
            EngineKind::GaussSeidel => "gauss-seidel",
            EngineKind::Jacobi => "jacobi",
            EngineKind::VariableSplitting => "variable-splitting",
            EngineKind::Gbs => "gbs",
            EngineKind::ProxJacobi => "prox-jacobi",
        }
    }

    /// Engines whose block updates within an iteration are mutually independent.
    pub fn is_jacobi_family(self) -> bool {
        matches!(self, EngineKind::Jacobi | EngineKind::ProxJacobi | EngineKind::VariableSplitting)
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EngineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown engine `{s}`"))
    }
}

/// Runs `kind` on `p`.
pub fn run(kind: EngineKind, p: &BlockProblem, cfg: &SolverConfig) -> Result<RunOutcome, EngineError> {
    run_observed(kind, p, cfg, None)
}

/// Runs `kind` on `p`, calling `observer` once per iteration.
pub fn run_observed(
    kind: EngineKind,
    p: &BlockProblem,
    cfg: &SolverConfig,
    observer: Option<&mut Observer<'_>>,
) -> Result<RunOutcome, EngineError> {
    match kind {
        EngineKind::TwoBlock => sequential::two_block(p, cfg, observer),
        EngineKind::GaussSeidel => sequential::gauss_seidel(p, cfg, observer),
        EngineKind::Jacobi => jacobi::jacobi(p, cfg, observer),
        EngineKind::ProxJacobi => jacobi::prox_jacobi(p, cfg, observer),
        EngineKind::VariableSplitting => splitting::variable_splitting(p, cfg, observer),
        EngineKind::Gbs => gbs::gbs(p, cfg, observer),
    }
}
