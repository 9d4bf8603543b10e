//! Gauss-Seidel sweeps: the two-block engine and its direct N-block extension.

use std::time::Instant;

use super::driver::{drive, Observer, Scheme, StepMetrics};
use super::subproblem::{build_solvers, BlockSolver};
use super::{EngineError, RunOutcome, SolverConfig};
use crate::problem::{others_minus_rhs, residual_from_products, BlockProblem, BlockVector};
use crate::Vector;

/// One forward sweep in `order`, each block reading the newest values of the others.
///
/// Overwrites `x` and `products` in place and returns per-block wall time (zeros unless
/// `timing`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn sweep(
    p: &BlockProblem,
    solvers: &[BlockSolver],
    order: &[usize],
    rho: f64,
    lambda: &Vector,
    x: &mut BlockVector,
    products: &mut [Vector],
    timing: bool,
) -> Result<Vec<f64>, EngineError> {
    let mut ms = vec![0.0; order.len()];
    for &i in order {
        let start = timing.then(Instant::now);
        let a = &p.block(i).coupling;
        let o = others_minus_rhs(products, i, p.rhs());
        let g = a.transpose() * (o * rho - lambda);
        let xi = solvers[i].solve(&g, x.segment(i))?;
        products[i] = a * &xi;
        *x.segment_mut(i) = xi;
        if let Some(t) = start {
            ms[i] = t.elapsed().as_secs_f64() * 1e3;
        }
    }
    Ok(ms)
}

struct GaussSeidel<'p> {
    p: &'p BlockProblem,
    solvers: Vec<BlockSolver>,
    order: Vec<usize>,
    rho: f64,
    timing: bool,
    x: BlockVector,
    products: Vec<Vector>,
    lambda: Vector,
}

impl<'p> GaussSeidel<'p> {
    fn new(p: &'p BlockProblem, cfg: &SolverConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let solvers = build_solvers(p, cfg.rho, &vec![None; p.num_blocks()])?;
        let x = cfg.start_point(p)?;
        let products = p.coupling_products(&x);
        Ok(Self {
            p,
            solvers,
            order: cfg.order(p.num_blocks())?,
            rho: cfg.rho,
            timing: cfg.record_timing,
            x,
            products,
            lambda: Vector::zeros(p.rows()),
        })
    }
}

impl Scheme for GaussSeidel<'_> {
    fn step(&mut self, _k: usize) -> Result<StepMetrics, EngineError> {
        let prev = self.x.clone();
        let ms = sweep(self.p, &self.solvers, &self.order, self.rho, &self.lambda, &mut self.x, &mut self.products, self.timing)?;
        let r = residual_from_products(&self.products, self.p.rhs());
        self.lambda = &self.lambda - &r * self.rho;
        Ok(StepMetrics {
            objective: self.p.objective_unchecked(&self.x),
            primal_residual: r.norm(),
            dual_metric: self.p.dual_metric_unchecked(&prev, &self.x, self.rho),
            block_ms: if self.timing { ms } else { Vec::new() },
        })
    }

    fn x(&self) -> &BlockVector {
        &self.x
    }

    fn lambda(&self) -> &Vector {
        &self.lambda
    }
}

pub(super) fn gauss_seidel(
    p: &BlockProblem,
    cfg: &SolverConfig,
    observer: Option<&mut Observer<'_>>,
) -> Result<RunOutcome, EngineError> {
    let mut scheme = GaussSeidel::new(p, cfg)?;
    drive(&mut scheme, cfg, observer)
}

pub(super) fn two_block(
    p: &BlockProblem,
    cfg: &SolverConfig,
    observer: Option<&mut Observer<'_>>,
) -> Result<RunOutcome, EngineError> {
    if p.num_blocks() != 2 {
        return Err(EngineError::InvalidConfig(format!("two-block engine needs 2 blocks, got {}", p.num_blocks())));
    }
    gauss_seidel(p, cfg, observer)
}

/// Two-block ADMM: `x₁`-minimization, `x₂`-minimization, then `λ ← λ − ρ(A₁x₁ + A₂x₂ − c)`.
pub fn run_two_block(p: &BlockProblem, cfg: &SolverConfig) -> Result<RunOutcome, EngineError> {
    two_block(p, cfg, None)
}

/// Direct N-block extension: blocks minimized one after another with the newest values of
/// the preceding blocks, then one full multiplier step. Not convergent in general.
pub fn run_gauss_seidel(p: &BlockProblem, cfg: &SolverConfig) -> Result<RunOutcome, EngineError> {
    gauss_seidel(p, cfg, None)
}
