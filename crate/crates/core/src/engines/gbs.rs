//! ADMM with Gaussian back substitution: a Gauss-Seidel prediction `(x̃, λ̃)` followed by a
//! correction that solves `H⁻¹Mᵀ(v⁺ − v) = α(ṽ − v)` for `v = (x_2, ..., x_N, λ)` by
//! backward substitution. `x_1` only feeds the next prediction and takes `x̃_1` directly.

use nalgebra::Cholesky;

use super::driver::{drive, Aux, Observer, Scheme, StepMetrics};
use super::sequential::sweep;
use super::subproblem::{build_solvers, BlockSolver};
use super::{EngineError, RunOutcome, SolverConfig};
use crate::problem::{residual_from_products, BlockProblem, BlockVector};
use crate::{Matrix, Vector};

/// The matrices `H` and `M` of the correction step, kept as blocks over
/// `v = (x_2, ..., x_N, λ)`.
///
/// `H = diag(ρA_2ᵀA_2, ..., ρA_NᵀA_N, (1/ρ)I)`, and `M` is block lower-triangular with
/// `M_rc = ρA_rᵀA_c` for `c ≤ r` among the x-blocks, `(1/ρ)I` for the multiplier and zeros
/// elsewhere. Block `r` of `v` is problem block `r + 1`.
#[derive(Debug, Clone)]
pub struct CorrectionMatrices {
    rho: f64,
    couplings: Vec<Matrix>,
    grams: Vec<Cholesky<f64, nalgebra::Dyn>>,
    m: usize,
}

/// Validates `A_iᵀA_i` for blocks `1..N` (0-based) and builds the correction matrices.
pub fn build_correction_matrices(p: &BlockProblem, rho: f64) -> Result<CorrectionMatrices, EngineError> {
    if !(rho > 0.0) {
        return Err(EngineError::InvalidConfig(format!("rho must be positive, got {rho}")));
    }
    if p.num_blocks() < 2 {
        return Err(EngineError::InvalidConfig("back substitution needs at least 2 blocks".into()));
    }
    let mut couplings = Vec::new();
    let mut grams = Vec::new();
    for i in 1..p.num_blocks() {
        let a = &p.block(i).coupling;
        if crate::prox::numerical_rank(a) < a.ncols() {
            return Err(EngineError::SingularBlock(i));
        }
        let gram = a.transpose() * a;
        grams.push(Cholesky::new(gram).ok_or(EngineError::SingularBlock(i))?);
        couplings.push(a.clone());
    }
    Ok(CorrectionMatrices { rho, couplings, grams, m: p.rows() })
}

impl CorrectionMatrices {
    /// Number of blocks of `v` (x-blocks plus the multiplier).
    pub fn num_blocks(&self) -> usize {
        self.couplings.len() + 1
    }

    fn is_multiplier(&self, r: usize) -> bool {
        r == self.couplings.len()
    }

    fn dim(&self, r: usize) -> usize {
        if self.is_multiplier(r) {
            self.m
        } else {
            self.couplings[r].ncols()
        }
    }

    /// Diagonal block `H_rr`.
    pub fn h_block(&self, r: usize) -> Matrix {
        if self.is_multiplier(r) {
            Matrix::identity(self.m, self.m) / self.rho
        } else {
            self.couplings[r].transpose() * &self.couplings[r] * self.rho
        }
    }

    /// Block `M_rc`.
    pub fn m_block(&self, r: usize, c: usize) -> Matrix {
        let (nr, nc) = (self.dim(r), self.dim(c));
        if self.is_multiplier(r) || self.is_multiplier(c) {
            if r == c {
                return Matrix::identity(self.m, self.m) / self.rho;
            }
            return Matrix::zeros(nr, nc);
        }
        if c > r {
            return Matrix::zeros(nr, nc);
        }
        self.couplings[r].transpose() * &self.couplings[c] * self.rho
    }

    /// Block `(H⁻¹Mᵀ)_rc = H_rr⁻¹ M_crᵀ`.
    pub fn h_inv_mt_block(&self, r: usize, c: usize) -> Matrix {
        let mt = self.m_block(c, r).transpose();
        if self.is_multiplier(r) {
            mt * self.rho
        } else {
            self.grams[r].solve(&mt) / self.rho
        }
    }

    /// Solves `H⁻¹Mᵀ d = rhs` blockwise from the last block up.
    ///
    /// The multiplier block and the last x-block have identity rows; each earlier x-block `r`
    /// gives `d_r = rhs_r − (A_rᵀA_r)⁻¹A_rᵀ Σ_{c>r} A_c d_c`.
    pub fn back_substitute(&self, rhs: &[Vector]) -> Vec<Vector> {
        let nx = self.couplings.len();
        let mut d: Vec<Vector> = rhs.to_vec();
        let mut tail = Vector::zeros(self.m);
        for r in (0..nx).rev() {
            if r + 1 < nx {
                d[r] = &rhs[r] - self.grams[r].solve(&(self.couplings[r].transpose() * &tail));
            }
            tail += &self.couplings[r] * &d[r];
        }
        d
    }
}

struct Gbs<'p> {
    p: &'p BlockProblem,
    solvers: Vec<BlockSolver>,
    corr: CorrectionMatrices,
    order: Vec<usize>,
    rho: f64,
    alpha: f64,
    timing: bool,
    x: BlockVector,
    lambda: Vector,
    x_pred: BlockVector,
    lambda_pred: Vector,
}

impl Scheme for Gbs<'_> {
    fn step(&mut self, _k: usize) -> Result<StepMetrics, EngineError> {
        let prev = self.x.clone();
        let mut pred = self.x.clone();
        let mut products = self.p.coupling_products(&pred);
        let ms = sweep(self.p, &self.solvers, &self.order, self.rho, &self.lambda, &mut pred, &mut products, self.timing)?;
        let r_pred = residual_from_products(&products, self.p.rhs());
        self.lambda_pred = &self.lambda - &r_pred * self.rho;

        let n = self.p.num_blocks();
        let mut rhs: Vec<Vector> = (1..n).map(|i| (pred.segment(i) - self.x.segment(i)) * self.alpha).collect();
        rhs.push((&self.lambda_pred - &self.lambda) * self.alpha);
        let d = self.corr.back_substitute(&rhs);
        *self.x.segment_mut(0) = pred.segment(0).clone();
        for i in 1..n {
            *self.x.segment_mut(i) += &d[i - 1];
        }
        self.lambda += &d[n - 1];
        self.x_pred = pred;

        let r = self.p.primal_residual(&self.x)?;
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

    fn aux(&self) -> Aux<'_> {
        Aux::Gbs { x_pred: &self.x_pred, lambda_pred: &self.lambda_pred }
    }
}

pub(super) fn gbs(p: &BlockProblem, cfg: &SolverConfig, observer: Option<&mut Observer<'_>>) -> Result<RunOutcome, EngineError> {
    cfg.validate()?;
    let n = p.num_blocks();
    let order = cfg.order(n)?;
    if order.iter().enumerate().any(|(a, b)| a != *b) {
        return Err(EngineError::InvalidConfig("the prediction sweep runs in block order".into()));
    }
    let corr = build_correction_matrices(p, cfg.rho)?;
    let solvers = build_solvers(p, cfg.rho, &vec![None; n])?;
    let x = cfg.start_point(p)?;
    let mut scheme = Gbs {
        p,
        solvers,
        corr,
        order,
        rho: cfg.rho,
        alpha: cfg.alpha,
        timing: cfg.record_timing,
        x_pred: x.clone(),
        x,
        lambda: Vector::zeros(p.rows()),
        lambda_pred: Vector::zeros(p.rows()),
    };
    drive(&mut scheme, cfg, observer)
}

/// ADMM with Gaussian back substitution and correction step `cfg.alpha`.
pub fn run_gbs(p: &BlockProblem, cfg: &SolverConfig) -> Result<RunOutcome, EngineError> {
    gbs(p, cfg, None)
}
