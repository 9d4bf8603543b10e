//! Jacobi sweeps: every block reads only iteration-`k` values, so the updates are
//! independent. The proximal variant adds `½‖x_i − x_iᵏ‖²_{P_i}` and damps the multiplier
//! step by `γ`.

use super::driver::{drive, Observer, Protocol, Rounds, StepMetrics};
use super::subproblem::{build_solvers, BlockSolver};
use super::{EngineError, RunOutcome, SolverConfig};
use crate::problem::{others_minus_rhs, residual_from_products, BlockProblem, BlockVector};
use crate::{Matrix, Vector};

pub(crate) struct JacobiProtocol<'p> {
    p: &'p BlockProblem,
    solvers: Vec<BlockSolver>,
    prox: Vec<Option<Matrix>>,
    rho: f64,
    /// Multiplier step as a multiple of `ρ`: 1 for plain Jacobi, `γ` for the proximal variant.
    step: f64,
    x: BlockVector,
    products: Vec<Vector>,
    lambda: Vector,
}

impl<'p> JacobiProtocol<'p> {
    pub fn new(p: &'p BlockProblem, cfg: &SolverConfig, proximal: bool) -> Result<Self, EngineError> {
        cfg.validate()?;
        let prox = if proximal { cfg.prox_matrices(p)? } else { vec![None; p.num_blocks()] };
        let solvers = build_solvers(p, cfg.rho, &prox)?;
        let x = cfg.start_point(p)?;
        let products = p.coupling_products(&x);
        Ok(Self {
            p,
            solvers,
            prox,
            rho: cfg.rho,
            step: if proximal { cfg.gamma } else { 1.0 },
            x,
            products,
            lambda: Vector::zeros(p.rows()),
        })
    }
}

impl Protocol for JacobiProtocol<'_> {
    fn workers(&self) -> usize {
        self.p.num_blocks()
    }

    /// `ρ(Σ_{j≠i} A_j x_jᵏ − c) − λᵏ`.
    fn signal(&self, w: usize) -> Vector {
        others_minus_rhs(&self.products, w, self.p.rhs()) * self.rho - &self.lambda
    }

    fn update(&self, w: usize, signal: &Vector) -> Result<Vector, EngineError> {
        let xi = self.x.segment(w);
        let mut g = self.p.block(w).coupling.transpose() * signal;
        if let Some(pm) = &self.prox[w] {
            g -= pm * xi;
        }
        self.solvers[w].solve(&g, xi)
    }

    fn absorb(&mut self, blocks: Vec<Vector>) -> Result<StepMetrics, EngineError> {
        let prev = std::mem::replace(&mut self.x, BlockVector::new(blocks));
        self.products = self.p.coupling_products(&self.x);
        let r = residual_from_products(&self.products, self.p.rhs());
        self.lambda = &self.lambda - &r * (self.step * self.rho);
        Ok(StepMetrics {
            objective: self.p.objective_unchecked(&self.x),
            primal_residual: r.norm(),
            dual_metric: self.p.dual_metric_unchecked(&prev, &self.x, self.rho),
            block_ms: Vec::new(),
        })
    }

    fn x(&self) -> &BlockVector {
        &self.x
    }

    fn lambda(&self) -> &Vector {
        &self.lambda
    }
}

pub(super) fn jacobi(p: &BlockProblem, cfg: &SolverConfig, observer: Option<&mut Observer<'_>>) -> Result<RunOutcome, EngineError> {
    let mut rounds = Rounds::new(JacobiProtocol::new(p, cfg, false)?, cfg, None)?;
    drive(&mut rounds, cfg, observer)
}

pub(super) fn prox_jacobi(
    p: &BlockProblem,
    cfg: &SolverConfig,
    observer: Option<&mut Observer<'_>>,
) -> Result<RunOutcome, EngineError> {
    let mut rounds = Rounds::new(JacobiProtocol::new(p, cfg, true)?, cfg, None)?;
    drive(&mut rounds, cfg, observer)
}

/// All blocks minimize the augmented Lagrangian in parallel from iteration-`k` values, then
/// one full multiplier step.
pub fn run_jacobi(p: &BlockProblem, cfg: &SolverConfig) -> Result<RunOutcome, EngineError> {
    jacobi(p, cfg, None)
}

/// Jacobi updates with proximal weights `cfg.prox` and damped step `λ ← λ − γρ(Σ A_i x_i − c)`.
pub fn run_prox_jacobi(p: &BlockProblem, cfg: &SolverConfig) -> Result<RunOutcome, EngineError> {
    prox_jacobi(p, cfg, None)
}
