//! Mobile data offloading between base stations and access points.
//!
//! Base station `b` offloads `x_{ba}` Mbps through access point `a`, which admits `y_{ab}`.
//! The controller enforces `x_{ba} = y_{ab}` through per-pair multipliers `λ_{ab}`:
//!
//! ```text
//!   min  Σ_a θ_a·1ᵀy_a − Σ_b log(1ᵀx_b + 1)
//!   s.t. x_{ba} = y_{ab},  y_a ≥ 0,  1ᵀy_a ≤ C_a
//! ```
//!
//! Every round the controller sends `p_{ab} = y_{ab} + λ_{ab}/ρ` to each base station and
//! `q_{ba} = x_{ba} − λ_{ab}/ρ` to each access point, all stations update with a proximal
//! term `½‖·−·ᵏ‖²_{0.1I}`, and the controller takes a damped multiplier step. Base stations
//! are workers `0..B`, access points workers `B..B+A`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::MessageLog;
use crate::engines::{drive, EngineError, Protocol, Rounds, RunOutcome, SolverConfig, StepMetrics};
use crate::problem::{BlockVector, SmoothFunction};
use crate::prox::{minimize_smooth, project_capped_simplexoid, ProxError, SmoothSpec};
use crate::{Matrix, Vector};

/// Lower clamp on the drawn AP costs.
pub const MIN_THETA: f64 = 0.01;
pub const DEFAULT_CAP: f64 = 10.0;
pub const DEFAULT_PROX: f64 = 0.1;

const BS_TOL: f64 = 1e-10;
const BS_MAX_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum OffloadError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid instance file: {0}")]
    Parse(String),
    #[error(transparent)]
    Solver(#[from] ProxError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Instance parameters. Costs are either listed or drawn from `seed`; `gamma` defaults to
/// `1/A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffloadSpec {
    pub bs: usize,
    pub ap: usize,
    pub cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_prox")]
    pub prox: f64,
}

fn default_rho() -> f64 {
    1.0
}

fn default_prox() -> f64 {
    DEFAULT_PROX
}

impl OffloadSpec {
    /// `B` stations, `A` access points of capacity 10 Mbps, costs drawn from `seed`.
    pub fn standard_setup(bs: usize, ap: usize, seed: u64) -> Self {
        Self { bs, ap, cap: DEFAULT_CAP, theta: None, seed: Some(seed), rho: 1.0, gamma: None, prox: DEFAULT_PROX }
    }

    pub fn parse(text: &str) -> Result<Self, OffloadError> {
        serde_json::from_str(text).map_err(|e| OffloadError::Parse(e.to_string()))
    }

    pub fn instance(&self) -> Result<OffloadInstance, OffloadError> {
        let mut inst = match &self.theta {
            Some(theta) => {
                if theta.len() != self.ap {
                    return Err(OffloadError::InvalidDims(format!("{} costs for {} access points", theta.len(), self.ap)));
                }
                let mut inst = build_offload(self.bs, self.ap, self.cap, 0)?;
                inst.theta = Vector::from_column_slice(theta);
                inst
            }
            None => build_offload(self.bs, self.ap, self.cap, self.seed.unwrap_or(0))?,
        };
        inst.rho = self.rho;
        inst.gamma = self.gamma.unwrap_or(inst.gamma);
        inst.prox = self.prox;
        inst.validate()?;
        Ok(inst)
    }
}

pub fn spec_to_json(spec: &OffloadSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serializes")
}

#[derive(Debug, Clone)]
pub struct OffloadInstance {
    pub bs: usize,
    pub ap: usize,
    /// Per-AP capacity `C_a`.
    pub cap: f64,
    /// Per-AP unit cost `θ_a`.
    pub theta: Vector,
    pub rho: f64,
    /// Multiplier damping.
    pub gamma: f64,
    /// Proximal weight, `P_i = prox·I`.
    pub prox: f64,
}

/// Draws `θ_a ~ N(0, 1)` from `theta_seed`, clamped to at least [`MIN_THETA`]. `ρ = 1`,
/// `γ = 1/A`, proximal weight 0.1.
pub fn build_offload(bs: usize, ap: usize, cap: f64, theta_seed: u64) -> Result<OffloadInstance, OffloadError> {
    if bs == 0 || ap == 0 {
        return Err(OffloadError::InvalidDims(format!("need at least one station of each kind, got B={bs}, A={ap}")));
    }
    if !(cap >= 0.0 && cap.is_finite()) {
        return Err(OffloadError::InvalidDims(format!("capacity must be finite and ≥ 0, got {cap}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(theta_seed);
    let theta = Vector::from_fn(ap, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v.max(MIN_THETA)
    });
    Ok(OffloadInstance { bs, ap, cap, theta, rho: 1.0, gamma: 1.0 / ap as f64, prox: DEFAULT_PROX })
}

impl OffloadInstance {
    fn validate(&self) -> Result<(), OffloadError> {
        let bad = |m: String| Err(OffloadError::InvalidDims(m));
        if self.bs == 0 || self.ap == 0 || self.theta.len() != self.ap {
            return bad(format!("B={}, A={}, {} costs", self.bs, self.ap, self.theta.len()));
        }
        if !(self.cap >= 0.0 && self.cap.is_finite()) {
            return bad(format!("capacity must be finite and ≥ 0, got {}", self.cap));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return bad("costs must be finite".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) || !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("need ρ > 0 and γ > 0, got ρ={}, γ={}", self.rho, self.gamma));
        }
        if !(self.prox > 0.0 && self.prox.is_finite()) {
            return bad(format!("proximal weight must be > 0, got {}", self.prox));
        }
        Ok(())
    }

    /// `Σ_a θ_a 1ᵀy_a − Σ_b log(1ᵀx_b + 1)`; `x` is B×A, `y` is A×B.
    pub fn objective(&self, x: &Matrix, y: &Matrix) -> f64 {
        let cost: f64 = (0..self.ap).map(|a| self.theta[a] * y.row(a).sum()).sum();
        let utility: f64 = (0..self.bs).map(|b| utility(x.row(b).sum())).sum();
        cost - utility
    }
}

fn utility(s: f64) -> f64 {
    if s + 1.0 > 0.0 {
        (s + 1.0).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Controller-to-station signals.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBundle {
    /// `p_{ab} = y_{ab} + λ_{ab}/ρ`, A×B; column `b` goes to station `b`.
    pub p: Matrix,
    /// `q_{ba} = x_{ba} − λ_{ab}/ρ`, B×A; column `a` goes to access point `a`.
    pub q: Matrix,
}

pub fn signals(inst: &OffloadInstance, x: &Matrix, y: &Matrix, lambda: &Matrix) -> SignalBundle {
    SignalBundle { p: y + lambda / inst.rho, q: x - lambda.transpose() / inst.rho }
}

/// `−log(1ᵀx + 1) + ρ/2‖x − p‖² + w/2‖x − xᵏ‖²`.
struct BsObjective {
    p: Vector,
    prev: Vector,
    rho: f64,
    prox: f64,
}

impl SmoothFunction for BsObjective {
    fn dim(&self) -> usize {
        self.p.len()
    }

    fn value(&self, x: &Vector) -> f64 {
        -utility(x.sum()) + 0.5 * self.rho * (x - &self.p).norm_squared() + 0.5 * self.prox * (x - &self.prev).norm_squared()
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let t = 1.0 / (x.sum() + 1.0);
        (x - &self.p) * self.rho + (x - &self.prev) * self.prox - Vector::repeat(x.len(), t)
    }

    fn hessian(&self, x: &Vector) -> Option<Matrix> {
        let n = x.len();
        let s = x.sum() + 1.0;
        Some(Matrix::from_element(n, n, 1.0 / (s * s)) + Matrix::identity(n, n) * (self.rho + self.prox))
    }
}

/// Base-station update: damped Newton on the strongly convex (modulus `ρ + w`) objective.
pub fn bs_update(inst: &OffloadInstance, x_prev: &Vector, p: &Vector) -> Result<Vector, OffloadError> {
    if x_prev.len() != inst.ap || p.len() != inst.ap {
        return Err(OffloadError::ShapeMismatch(format!("station vectors must have {} entries", inst.ap)));
    }
    let f = BsObjective { p: p.clone(), prev: x_prev.clone(), rho: inst.rho, prox: inst.prox };
    let mu = inst.rho + inst.prox;
    // quadratic part's minimizer, lifted into the domain of the log if needed
    let mut start = (p * inst.rho + x_prev * inst.prox) / mu;
    let s = start.sum();
    if s < 0.0 {
        start.add_scalar_mut(-s / inst.ap as f64);
    }
    let spec = SmoothSpec { func: &f, mu, lipschitz: mu + inst.ap as f64, start };
    Ok(minimize_smooth(&spec, BS_TOL * (1.0 + inst.rho), BS_MAX_ITER)?)
}

/// Access-point update: the objective is `(ρ+w)/2‖y − v‖²` plus a constant with
/// `v = (ρq + w·yᵏ − θ_a 1)/(ρ+w)`, so the constrained minimizer is the projection of `v`
/// onto `{y ≥ 0, 1ᵀy ≤ C_a}`.
pub fn ap_update(inst: &OffloadInstance, a: usize, y_prev: &Vector, q: &Vector) -> Result<Vector, OffloadError> {
    if a >= inst.ap {
        return Err(OffloadError::ShapeMismatch(format!("access point {a} of {}", inst.ap)));
    }
    if y_prev.len() != inst.bs || q.len() != inst.bs {
        return Err(OffloadError::ShapeMismatch(format!("access-point vectors must have {} entries", inst.bs)));
    }
    let mu = inst.rho + inst.prox;
    let v = (q * inst.rho + y_prev * inst.prox).add_scalar(-inst.theta[a]) / mu;
    Ok(project_capped_simplexoid(&v, inst.cap)?)
}

/// `λ_{ab} ← λ_{ab} − γρ(x_{ba} − y_{ab})` for every pair.
pub fn controller_update(
    inst: &OffloadInstance,
    lambda: &Matrix,
    x: &Matrix,
    y: &Matrix,
    gamma: f64,
) -> Result<Matrix, OffloadError> {
    let (a, b) = (inst.ap, inst.bs);
    if lambda.shape() != (a, b) || y.shape() != (a, b) || x.shape() != (b, a) {
        return Err(OffloadError::ShapeMismatch(format!(
            "λ is {:?}, x is {:?}, y is {:?}; expected ({a}, {b}), ({b}, {a}), ({a}, {b})",
            lambda.shape(),
            x.shape(),
            y.shape()
        )));
    }
    Ok(lambda - (x.transpose() - y) * (gamma * inst.rho))
}

struct OffloadProtocol<'a> {
    inst: &'a OffloadInstance,
    /// B×A.
    x: Matrix,
    /// A×B.
    y: Matrix,
    lambda: Matrix,
    blocks: BlockVector,
    lambda_flat: Vector,
    signals: SignalBundle,
}

impl<'a> OffloadProtocol<'a> {
    fn new(inst: &'a OffloadInstance) -> Result<Self, OffloadError> {
        inst.validate()?;
        let (a, b) = (inst.ap, inst.bs);
        let x = Matrix::zeros(b, a);
        let y = Matrix::zeros(a, b);
        let lambda = Matrix::zeros(a, b);
        let signals = signals(inst, &x, &y, &lambda);
        let mut proto = Self {
            inst,
            x,
            y,
            lambda,
            blocks: BlockVector::zeros(&[]),
            lambda_flat: Vector::zeros(0),
            signals,
        };
        proto.sync_views();
        Ok(proto)
    }

    fn sync_views(&mut self) {
        let mut segments: Vec<Vector> = (0..self.inst.bs).map(|b| self.x.row(b).transpose()).collect();
        segments.extend((0..self.inst.ap).map(|a| self.y.row(a).transpose()));
        self.blocks = BlockVector::new(segments);
        // row-major over (a, b)
        self.lambda_flat = Vector::from_iterator(self.lambda.len(), self.lambda.transpose().iter().copied());
    }
}

fn engine_error(w: usize, e: OffloadError) -> EngineError {
    match e {
        OffloadError::Solver(source) => EngineError::Subproblem { block: w, source },
        other => EngineError::InvalidConfig(other.to_string()),
    }
}

impl Protocol for OffloadProtocol<'_> {
    fn workers(&self) -> usize {
        self.inst.bs + self.inst.ap
    }

    fn signal(&self, w: usize) -> Vector {
        let b = self.inst.bs;
        if w < b {
            self.signals.p.column(w).into_owned()
        } else {
            self.signals.q.column(w - b).into_owned()
        }
    }

    fn update(&self, w: usize, signal: &Vector) -> Result<Vector, EngineError> {
        let b = self.inst.bs;
        let r = if w < b {
            bs_update(self.inst, &self.x.row(w).transpose(), signal)
        } else {
            ap_update(self.inst, w - b, &self.y.row(w - b).transpose(), signal)
        };
        r.map_err(|e| engine_error(w, e))
    }

    fn absorb(&mut self, blocks: Vec<Vector>) -> Result<StepMetrics, EngineError> {
        let (a, b) = (self.inst.ap, self.inst.bs);
        let mut x = Matrix::zeros(b, a);
        let mut y = Matrix::zeros(a, b);
        for (w, block) in blocks.iter().enumerate() {
            if w < b {
                x.set_row(w, &block.transpose());
            } else {
                y.set_row(w - b, &block.transpose());
            }
        }
        let dual = self.inst.rho * (&x - &self.x).row_iter().chain((&y - &self.y).row_iter()).map(|r| r.norm()).fold(0.0, f64::max);
        self.lambda = controller_update(self.inst, &self.lambda, &x, &y, self.inst.gamma)
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        self.x = x;
        self.y = y;
        self.signals = signals(self.inst, &self.x, &self.y, &self.lambda);
        self.sync_views();
        Ok(StepMetrics {
            objective: self.inst.objective(&self.x, &self.y),
            primal_residual: (self.x.transpose() - &self.y).amax(),
            dual_metric: dual,
            block_ms: Vec::new(),
        })
    }

    fn x(&self) -> &BlockVector {
        &self.blocks
    }

    fn lambda(&self) -> &Vector {
        &self.lambda_flat
    }
}

/// Final allocation of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Allocation {
    /// `x[b][a]`.
    pub x: Vec<Vec<f64>>,
    /// `y[a][b]`.
    pub y: Vec<Vec<f64>>,
    /// `lambda[a][b]`.
    pub lambda: Vec<Vec<f64>>,
    pub objective: f64,
}

impl Allocation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("allocation serializes")
    }

    /// `max |x_{ba} − y_{ab}|`.
    pub fn consensus_gap(&self) -> f64 {
        let mut gap: f64 = 0.0;
        for (b, row) in self.x.iter().enumerate() {
            for (a, v) in row.iter().enumerate() {
                gap = gap.max((v - self.y[a][b]).abs());
            }
        }
        gap
    }
}

#[derive(Debug, Clone)]
pub struct OffloadRun {
    pub outcome: RunOutcome,
    pub allocation: Allocation,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn finish(proto: &OffloadProtocol<'_>, outcome: RunOutcome) -> OffloadRun {
    let allocation = Allocation {
        x: rows(&proto.x),
        y: rows(&proto.y),
        lambda: rows(&proto.lambda),
        objective: outcome.report.objective,
    };
    OffloadRun { outcome, allocation }
}

/// Runs the three-party iteration. `ρ`, `γ` and the proximal weight come from the
/// instance; tolerances, iteration cap, update order and parallelism from `cfg`. The trace
/// primal residual is `max |x_{ba} − y_{ab}|`.
///
/// The report's `x` lists the station blocks `x_b` followed by the access-point blocks
/// `y_a`; `lambda` is `λ` flattened row-major over `(a, b)`.
pub fn run_offloading(inst: &OffloadInstance, cfg: &SolverConfig) -> Result<OffloadRun, OffloadError> {
    run(inst, cfg, None)
}

/// [`run_offloading`] with every controller/station message logged.
pub fn simulate_offloading(inst: &OffloadInstance, cfg: &SolverConfig) -> Result<(OffloadRun, MessageLog), OffloadError> {
    let mut log = MessageLog::new();
    let run = run(inst, cfg, Some(&mut log))?;
    Ok((run, log))
}

fn run(inst: &OffloadInstance, cfg: &SolverConfig, log: Option<&mut MessageLog>) -> Result<OffloadRun, OffloadError> {
    cfg.validate()?;
    let mut rounds = Rounds::new(OffloadProtocol::new(inst)?, cfg, log)?;
    let outcome = drive(&mut rounds, cfg, None)?;
    Ok(finish(&rounds.protocol, outcome))
}

/// Centralized reference with `x = yᵀ` substituted: accelerated projected gradient (FISTA
/// with gradient restart) on `Σ_a θ_a 1ᵀy_a − Σ_b log(Σ_a y_{ab} + 1)` over the capped sets,
/// step `1/A`. Returns the optimal value and `y` (A×B).
pub fn centralized_offload_oracle(inst: &OffloadInstance, tol: f64, max_iter: usize) -> Result<(f64, Matrix), OffloadError> {
    inst.validate()?;
    let (a, b) = (inst.ap, inst.bs);
    let value = |y: &Matrix| inst.objective(&y.transpose(), y);
    let gradient = |y: &Matrix| {
        let t: Vec<f64> = (0..b).map(|j| 1.0 / (y.column(j).sum() + 1.0)).collect();
        Matrix::from_fn(a, b, |i, j| inst.theta[i] - t[j])
    };
    let project = |y: &Matrix| -> Result<Matrix, OffloadError> {
        let mut out = Matrix::zeros(a, b);
        for i in 0..a {
            let row = project_capped_simplexoid(&y.row(i).transpose(), inst.cap)?;
            out.set_row(i, &row.transpose());
        }
        Ok(out)
    };
    let step = 1.0 / a as f64;
    let mut y = Matrix::zeros(a, b);
    let mut z = y.clone();
    let mut t = 1.0_f64;
    for _ in 0..max_iter {
        let next = project(&(&z - gradient(&z) * step))?;
        // gradient-mapping norm at the extrapolated point
        if (&z - &next).amax() <= tol {
            return Ok((value(&next), next));
        }
        if (&z - &next).dot(&(&next - &y)) > 0.0 {
            // momentum points uphill: restart
            y = next;
            z = y.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &y) * ((t - 1.0) / t_next);
        y = next;
        t = t_next;
    }
    Err(OffloadError::Solver(ProxError::MaxIterExceeded {
        best: Vector::from_iterator(a * b, y.transpose().iter().copied()),
        residual: f64::NAN,
        iterations: max_iter,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn unit_instance(theta: f64) -> OffloadInstance {
        let mut inst = build_offload(1, 1, 10.0, 0).unwrap();
        inst.theta = dvector![theta];
        inst
    }

    #[test]
    fn build_rejects_bad_dims() {
        assert!(matches!(build_offload(0, 3, 10.0, 1), Err(OffloadError::InvalidDims(_))));
        assert!(matches!(build_offload(2, 3, -1.0, 1), Err(OffloadError::InvalidDims(_))));
        let inst = build_offload(5, 5, 10.0, 3).unwrap();
        assert!(inst.theta.iter().all(|t| *t >= MIN_THETA));
        assert_eq!(inst.gamma, 0.2);
        assert_eq!(build_offload(5, 5, 10.0, 3).unwrap().theta, inst.theta);
    }

    #[test]
    fn bs_update_follows_the_signal_under_a_large_penalty() {
        let mut inst = build_offload(1, 3, 10.0, 0).unwrap();
        inst.rho = 1e6;
        let p = dvector![1.0, 2.0, 3.0];
        let x = bs_update(&inst, &Vector::zeros(3), &p).unwrap();
        assert!((x - p).amax() < 1e-3);
    }

    #[test]
    fn bs_update_scalar_stationarity() {
        // 1.1x = 1/(x+1)  →  1.1x² + 1.1x − 1 = 0
        let inst = unit_instance(0.5);
        let x = bs_update(&inst, &dvector![0.0], &dvector![0.0]).unwrap();
        let root = (-1.1 + (1.1f64 * 1.1 + 4.0 * 1.1).sqrt()) / 2.2;
        assert!((x[0] - root).abs() < 1e-9);
        let f = BsObjective { p: dvector![0.0], prev: dvector![0.0], rho: 1.0, prox: 0.1 };
        assert!(f.gradient(&x).norm() <= 1e-8);
    }

    #[test]
    fn ap_update_cases() {
        let mut inst = build_offload(2, 1, 10.0, 0).unwrap();
        inst.theta = dvector![0.0];
        let y = ap_update(&inst, 0, &Vector::zeros(2), &dvector![9.0, 9.0]).unwrap();
        assert!((y - dvector![5.0, 5.0]).amax() < 1e-12);

        // inactive constraint: unconstrained minimizer (ρq − θ)/(ρ+0.1)
        let y = ap_update(&inst, 0, &Vector::zeros(2), &dvector![1.1, 2.2]).unwrap();
        assert!((y - dvector![1.0, 2.0]).amax() < 1e-12);

        inst.theta = dvector![1e6];
        let y = ap_update(&inst, 0, &Vector::zeros(2), &dvector![0.5, 0.5]).unwrap();
        assert_eq!(y, Vector::zeros(2));
    }

    #[test]
    fn ap_update_matches_grid_search() {
        let mut inst = build_offload(2, 1, 10.0, 0).unwrap();
        inst.theta = dvector![0.0];
        let q = dvector![9.0, 9.0];
        let f = |y0: f64, y1: f64| 0.5 * ((y0 - 9.0f64).powi(2) + (y1 - 9.0f64).powi(2)) + 0.05 * (y0 * y0 + y1 * y1);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=1000 {
            for j in 0..=(1000 - i) {
                let (y0, y1) = (i as f64 * 0.01, j as f64 * 0.01);
                let v = f(y0, y1);
                if v < best.0 {
                    best = (v, y0, y1);
                }
            }
        }
        let y = ap_update(&inst, 0, &Vector::zeros(2), &q).unwrap();
        assert!((y[0] - best.1).abs() <= 1e-3 + 1e-9 && (y[1] - best.2).abs() <= 1e-3 + 1e-9);
    }

    #[test]
    fn controller_update_cases() {
        let inst = unit_instance(0.5);
        let l = dmatrix![0.7];
        assert_eq!(controller_update(&inst, &l, &dmatrix![3.0], &dmatrix![3.0], 1.0).unwrap(), l);
        assert_eq!(controller_update(&inst, &l, &dmatrix![5.0], &dmatrix![3.0], 0.0).unwrap(), l);
        let l = controller_update(&inst, &dmatrix![0.0], &dmatrix![3.0], &dmatrix![1.0], 1.0).unwrap();
        assert_eq!(l, dmatrix![-2.0]);
        assert!(matches!(
            controller_update(&inst, &dmatrix![0.0, 1.0], &dmatrix![3.0], &dmatrix![1.0], 1.0),
            Err(OffloadError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn scalar_instance_reaches_calculus_optimum() {
        // 0.5 = 1/(x+1) → x = 1. With γ = 1/A = 1 the two stations lock into a cycle;
        // stronger damping converges.
        let mut inst = unit_instance(0.5);
        let cycle = run_offloading(&inst, &SolverConfig { max_iter: 2000, ..Default::default() }).unwrap();
        assert_eq!(cycle.outcome.report.status, crate::Status::MaxIterReached);
        inst.gamma = 0.3;
        let run = run_offloading(&inst, &SolverConfig::default()).unwrap();
        assert_eq!(run.outcome.report.status, crate::Status::Converged);
        assert!((run.allocation.x[0][0] - 1.0).abs() < 1e-5);
        assert!((run.allocation.y[0][0] - 1.0).abs() < 1e-5);
        let (v, y) = centralized_offload_oracle(&inst, 1e-12, 100_000).unwrap();
        assert!((y[(0, 0)] - 1.0).abs() < 1e-6);
        assert!((v - (0.5 - 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn spec_round_trip() {
        let spec = OffloadSpec::standard_setup(5, 10, 2015);
        let back = OffloadSpec::parse(&spec_to_json(&spec)).unwrap();
        assert_eq!(back, spec);
        let inst = back.instance().unwrap();
        assert_eq!((inst.bs, inst.ap, inst.cap), (5, 10, 10.0));
        assert_eq!(inst.gamma, 0.1);
        let listed = OffloadSpec { theta: Some(vec![0.5; 3]), ..OffloadSpec::standard_setup(2, 3, 0) };
        assert_eq!(listed.instance().unwrap().theta, dvector![0.5, 0.5, 0.5]);
        let wrong = OffloadSpec { theta: Some(vec![0.5; 2]), ..OffloadSpec::standard_setup(2, 3, 0) };
        assert!(wrong.instance().is_err());
    }
}
