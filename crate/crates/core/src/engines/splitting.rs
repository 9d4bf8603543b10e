//! Variable splitting: each block gets its own copy of the coupling constraint,
//! `A_i x_i + z_i = c/N`, with `z ∈ Z = {z : Σ z_i = 0}`. The x-group and the z-group then
//! alternate as a two-block ADMM with per-block multipliers `λ_i`.

use super::driver::{drive, Aux, Observer, Protocol, Rounds, StepMetrics};
use super::subproblem::{build_solvers, BlockSolver};
use super::{EngineError, RunOutcome, SolverConfig};
use crate::problem::{residual_from_products, BlockProblem, BlockVector};
use crate::Vector;

pub(crate) struct SplittingProtocol<'p> {
    p: &'p BlockProblem,
    solvers: Vec<BlockSolver>,
    rho: f64,
    /// `c / N`
    share: Vector,
    x: BlockVector,
    z: Vec<Vector>,
    multipliers: Vec<Vector>,
    /// Mean of the per-block multipliers, reported as the multiplier of `Σ A_i x_i = c`.
    lambda: Vector,
}

impl<'p> SplittingProtocol<'p> {
    pub fn new(p: &'p BlockProblem, cfg: &SolverConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let n = p.num_blocks();
        if n < 2 {
            return Err(EngineError::InvalidConfig("variable splitting needs at least 2 blocks".into()));
        }
        let solvers = build_solvers(p, cfg.rho, &vec![None; n])?;
        let m = p.rows();
        Ok(Self {
            p,
            solvers,
            rho: cfg.rho,
            share: p.rhs() / n as f64,
            x: cfg.start_point(p)?,
            z: vec![Vector::zeros(m); n],
            multipliers: vec![Vector::zeros(m); n],
            lambda: Vector::zeros(m),
        })
    }
}

/// Projection onto `{Σ z_i = 0}`: subtract the blockwise mean.
pub(crate) fn project_zero_sum(w: &[Vector]) -> Vec<Vector> {
    let mut mean = Vector::zeros(w[0].len());
    for wi in w {
        mean += wi;
    }
    mean /= w.len() as f64;
    w.iter().map(|wi| wi - &mean).collect()
}

impl Protocol for SplittingProtocol<'_> {
    fn workers(&self) -> usize {
        self.p.num_blocks()
    }

    /// `ρ(z_i − c/N) − λ_i`.
    fn signal(&self, w: usize) -> Vector {
        (&self.z[w] - &self.share) * self.rho - &self.multipliers[w]
    }

    fn update(&self, w: usize, signal: &Vector) -> Result<Vector, EngineError> {
        let g = self.p.block(w).coupling.transpose() * signal;
        self.solvers[w].solve(&g, self.x.segment(w))
    }

    fn absorb(&mut self, blocks: Vec<Vector>) -> Result<StepMetrics, EngineError> {
        let prev = std::mem::replace(&mut self.x, BlockVector::new(blocks));
        let products = self.p.coupling_products(&self.x);
        // z-group: min over Z of Σ ρ/2 ‖A_i x_i + z_i − c/N − λ_i/ρ‖²
        let w: Vec<Vector> = products
            .iter()
            .zip(&self.multipliers)
            .map(|(u, l)| &self.share - u + l / self.rho)
            .collect();
        self.z = project_zero_sum(&w);
        for ((l, u), z) in self.multipliers.iter_mut().zip(&products).zip(&self.z) {
            *l -= (u + z - &self.share) * self.rho;
        }
        let mut mean = Vector::zeros(self.p.rows());
        for l in &self.multipliers {
            mean += l;
        }
        self.lambda = mean / self.multipliers.len() as f64;
        let r = residual_from_products(&products, self.p.rhs());
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

    fn aux(&self) -> Aux<'_> {
        Aux::Splitting { z: &self.z, multipliers: &self.multipliers }
    }
}

pub(super) fn variable_splitting(
    p: &BlockProblem,
    cfg: &SolverConfig,
    observer: Option<&mut Observer<'_>>,
) -> Result<RunOutcome, EngineError> {
    let mut rounds = Rounds::new(SplittingProtocol::new(p, cfg)?, cfg, None)?;
    drive(&mut rounds, cfg, observer)
}

/// Variable-splitting ADMM. Status and residuals refer to the original constraint
/// `Σ A_i x_i = c`; the reported multiplier is the mean of the per-block multipliers.
pub fn run_variable_splitting(p: &BlockProblem, cfg: &SolverConfig) -> Result<RunOutcome, EngineError> {
    variable_splitting(p, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn zero_sum_projection_sums_to_zero() {
        let z = project_zero_sum(&[dvector![1.0, 2.0], dvector![4.0, -1.0], dvector![0.5, 0.25]]);
        let total = z.iter().fold(Vector::zeros(2), |acc, v| acc + v);
        assert!(total.amax() <= 1e-12);
        // already zero-sum input is unchanged
        let again = project_zero_sum(&z);
        for (a, b) in z.iter().zip(&again) {
            assert!((a - b).amax() <= 1e-15);
        }
    }
}
