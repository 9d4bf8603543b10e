//! Maps each block's (objective, set) pair to a prox-kit routine once, before iteration 0.
//!
//! Every block update has the form
//!
//! ```text
//!   min_x  f_i(x) + ½ xᵀK x + gᵀx   over X_i
//! ```
//!
//! with `K` fixed for the run (`ρA_iᵀA_i` plus any proximal weight) and `g` changing every
//! iteration.

use super::EngineError;
use crate::problem::{BlockSpec, FeasibleSet, ObjectiveTerm, SmoothFunction};
use crate::prox::{
    minimize_smooth, minimize_smooth_projected, project_box, project_capped_simplexoid, solve_box_qp_from,
    solve_projected_qp, EqQpFactor, ProxError, QpSpec, SmoothSpec, INNER_MAX_ITER, INNER_TOL,
};
use crate::{Matrix, Vector};

#[derive(Debug, Clone)]
enum Method {
    /// Quadratic objective over `Free` or an affine set: one factorization, exact solves.
    Factor { factor: EqQpFactor, q: Vector },
    /// Diagonal positive Hessian over a box: exact coordinatewise clamp.
    DiagonalBox { h: Vector, q: Vector, lower: Vector, upper: Vector },
    /// `H = h·I` over the capped set: exact projection of the unconstrained minimizer.
    ScaledCap { h: f64, q: Vector, cap: f64 },
    /// General quadratic over a box or capped set: iterative QP solver.
    Qp { spec: QpSpec },
    /// Non-quadratic smooth objective.
    Smooth { term: ObjectiveTerm, k: Matrix, set: FeasibleSet, mu: f64, lipschitz: f64 },
}

#[derive(Debug, Clone)]
pub(crate) struct BlockSolver {
    block: usize,
    method: Method,
}

fn unsupported(block: usize, reason: impl Into<String>) -> EngineError {
    EngineError::UnsupportedSubproblem { block, reason: reason.into() }
}

fn is_diagonal(m: &Matrix) -> bool {
    (0..m.nrows()).all(|r| (0..m.ncols()).all(|c| r == c || m[(r, c)] == 0.0))
}

/// `h` when `m = h·I` exactly.
fn scaled_identity(m: &Matrix) -> Option<f64> {
    let h = m[(0, 0)];
    (is_diagonal(m) && m.diagonal().iter().all(|v| *v == h)).then_some(h)
}

impl BlockSolver {
    pub fn new(block: usize, spec: &BlockSpec, k: Matrix) -> Result<Self, EngineError> {
        let n = spec.dim;
        let method = match (&spec.objective, &spec.set) {
            (_, FeasibleSet::ZeroSumAcrossBlocks) => {
                return Err(unsupported(block, "the zero-sum marker is only valid inside variable splitting"))
            }
            (obj, set) if obj.is_quadratic() => {
                let (q_mat, q) = obj.quadratic_parts(n).expect("checked by is_quadratic");
                let h = match q_mat {
                    Some(qm) => qm + &k,
                    None => k.clone(),
                };
                match set {
                    FeasibleSet::Free => {
                        let factor = EqQpFactor::new(&h, &Matrix::zeros(0, n), &Vector::zeros(0))
                            .map_err(|e| unsupported(block, format!("unconstrained update is not strongly convex: {e}")))?;
                        Method::Factor { factor, q }
                    }
                    FeasibleSet::AffineEquality { e, d } => {
                        let factor = EqQpFactor::new(&h, e, d)
                            .map_err(|e| unsupported(block, format!("equality-constrained update: {e}")))?;
                        Method::Factor { factor, q }
                    }
                    FeasibleSet::Box { lower, upper } if is_diagonal(&h) && h.diagonal().iter().all(|v| *v > 0.0) => {
                        Method::DiagonalBox { h: h.diagonal(), q, lower: lower.clone(), upper: upper.clone() }
                    }
                    FeasibleSet::NonNegCappedSum { cap } if scaled_identity(&h).is_some_and(|v| v > 0.0) => {
                        Method::ScaledCap { h: h[(0, 0)], q, cap: *cap }
                    }
                    FeasibleSet::Box { .. } | FeasibleSet::NonNegCappedSum { .. } => {
                        Method::Qp { spec: QpSpec { q_mat: h, q, set: set.clone() } }
                    }
                    FeasibleSet::ZeroSumAcrossBlocks => unreachable!("handled above"),
                }
            }
            (obj, set) => {
                let eig = k.clone().symmetric_eigenvalues();
                let (kmin, kmax) = (eig.min().max(0.0), eig.max().max(0.0));
                let curvature = match obj {
                    ObjectiveTerm::NegLogAffine { weight, a, b } => weight * a.norm_squared() / (b * b),
                    ObjectiveTerm::Smooth(o) => o.lipschitz,
                    _ => 0.0,
                };
                if matches!(set, FeasibleSet::Free) && !(kmin > 0.0) {
                    return Err(unsupported(block, "unconstrained smooth update needs a positive definite penalty"));
                }
                Method::Smooth {
                    term: obj.clone(),
                    k,
                    set: set.clone(),
                    mu: kmin,
                    lipschitz: (kmax + curvature).max(kmin).max(f64::MIN_POSITIVE),
                }
            }
        };
        Ok(Self { block, method })
    }

    /// Minimizer for linear term `g`; `warm` (the current block value) seeds iterative methods.
    pub fn solve(&self, g: &Vector, warm: &Vector) -> Result<Vector, EngineError> {
        let wrap = |source: ProxError| EngineError::Subproblem { block: self.block, source };
        let x = match &self.method {
            Method::Factor { factor, q } => factor.solve(&(q + g)),
            Method::DiagonalBox { h, q, lower, upper } => {
                let free = -(q + g).component_div(h);
                project_box(&free, lower, upper).map_err(wrap)?
            }
            Method::ScaledCap { h, q, cap } => {
                let free = -(q + g) / *h;
                project_capped_simplexoid(&free, *cap).map_err(wrap)?
            }
            Method::Qp { spec } => {
                let spec = QpSpec { q: &spec.q + g, ..spec.clone() };
                match spec.set {
                    FeasibleSet::Box { .. } => solve_box_qp_from(&spec, warm, INNER_TOL, INNER_MAX_ITER),
                    _ => solve_projected_qp(&spec, warm, INNER_TOL, INNER_MAX_ITER),
                }
                .map_err(wrap)?
            }
            Method::Smooth { term, k, set, mu, lipschitz } => {
                let func = Augmented { term, k, g };
                let spec = SmoothSpec { func: &func, mu: *mu, lipschitz: *lipschitz, start: warm.clone() };
                match set {
                    FeasibleSet::Free => minimize_smooth(&spec, INNER_TOL, INNER_MAX_ITER),
                    other => {
                        let project = |v: &Vector| {
                            other.project(v).ok_or_else(|| ProxError::UnsupportedSet(format!("{other:?}")))
                        };
                        minimize_smooth_projected(&spec, &project, INNER_TOL, INNER_MAX_ITER)
                    }
                }
                .map_err(wrap)?
            }
        };
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(wrap(ProxError::NonFiniteEncountered))
        }
    }
}

/// One solver per block with `K_i = ρA_iᵀA_i (+ P_i)`.
pub(crate) fn build_solvers(
    p: &crate::problem::BlockProblem,
    rho: f64,
    prox: &[Option<Matrix>],
) -> Result<Vec<BlockSolver>, EngineError> {
    p.blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut k = b.coupling.transpose() * &b.coupling * rho;
            if let Some(pm) = prox.get(i).and_then(Option::as_ref) {
                k += pm;
            }
            BlockSolver::new(i, b, k)
        })
        .collect()
}

/// `f(x) + ½ xᵀK x + gᵀx`.
struct Augmented<'a> {
    term: &'a ObjectiveTerm,
    k: &'a Matrix,
    g: &'a Vector,
}

impl SmoothFunction for Augmented<'_> {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn value(&self, x: &Vector) -> f64 {
        self.term.value(x) + 0.5 * x.dot(&(self.k * x)) + self.g.dot(x)
    }

    fn gradient(&self, x: &Vector) -> Vector {
        self.term.gradient(x) + self.k * x + self.g
    }

    fn hessian(&self, x: &Vector) -> Option<Matrix> {
        self.term.hessian(x).map(|h| h + self.k)
    }
}
