use std::fmt;
use std::sync::Arc;

use super::ProblemError;
use crate::prox;
use crate::{Matrix, Vector};

/// A differentiable function supplied by the caller.
///
/// `hessian` is optional; minimizers fall back to first-order steps without it.
pub trait SmoothFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    fn hessian(&self, _x: &Vector) -> Option<Matrix> {
        None
    }
}

/// A smooth objective with a declared Lipschitz bound on its gradient.
#[derive(Clone)]
pub struct SmoothOracle {
    pub func: Arc<dyn SmoothFunction>,
    pub lipschitz: f64,
}

impl fmt::Debug for SmoothOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothOracle")
            .field("dim", &self.func.dim())
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Per-block objective `f_i`.
#[derive(Debug, Clone)]
pub enum ObjectiveTerm {
    Zero,
    /// `qᵀx`
    Linear { q: Vector },
    /// `½ xᵀQx + qᵀx + r` with `Q` symmetric PSD.
    Quadratic { q_mat: Matrix, q: Vector, r: f64 },
    /// `−w · log(aᵀx + b)`, `+∞` where `aᵀx + b ≤ 0`.
    NegLogAffine { weight: f64, a: Vector, b: f64 },
    Smooth(SmoothOracle),
}

impl ObjectiveTerm {
    pub(crate) fn validate(&self, dim: usize) -> Result<(), ProblemError> {
        match self {
            ObjectiveTerm::Zero => Ok(()),
            ObjectiveTerm::Linear { q } => check_len("linear cost", q.len(), dim),
            ObjectiveTerm::Quadratic { q_mat, q, r } => {
                if q_mat.nrows() != dim || q_mat.ncols() != dim {
                    return Err(ProblemError::DimensionMismatch(format!(
                        "quadratic matrix is {}x{}, expected {dim}x{dim}",
                        q_mat.nrows(),
                        q_mat.ncols()
                    )));
                }
                check_len("quadratic linear part", q.len(), dim)?;
                if !r.is_finite() || q.iter().chain(q_mat.iter()).any(|v| !v.is_finite()) {
                    return Err(ProblemError::InvalidObjective("quadratic term has non-finite data".into()));
                }
                check_psd(q_mat)
            }
            ObjectiveTerm::NegLogAffine { weight, a, b } => {
                check_len("log-affine direction", a.len(), dim)?;
                if !(*weight > 0.0) || !weight.is_finite() {
                    return Err(ProblemError::InvalidObjective(format!("log-affine weight must be > 0, got {weight}")));
                }
                if !(*b > 0.0) || !b.is_finite() {
                    return Err(ProblemError::InvalidObjective(format!("log-affine offset must be > 0, got {b}")));
                }
                Ok(())
            }
            ObjectiveTerm::Smooth(o) => {
                check_len("smooth oracle", o.func.dim(), dim)?;
                if !(o.lipschitz > 0.0) {
                    return Err(ProblemError::InvalidObjective(format!(
                        "Lipschitz bound must be > 0, got {}",
                        o.lipschitz
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            ObjectiveTerm::Zero => 0.0,
            ObjectiveTerm::Linear { q } => q.dot(x),
            ObjectiveTerm::Quadratic { q_mat, q, r } => 0.5 * x.dot(&(q_mat * x)) + q.dot(x) + r,
            ObjectiveTerm::NegLogAffine { weight, a, b } => {
                let s = a.dot(x) + b;
                if s > 0.0 {
                    -weight * s.ln()
                } else {
                    f64::INFINITY
                }
            }
            ObjectiveTerm::Smooth(o) => o.func.value(x),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            ObjectiveTerm::Zero => Vector::zeros(x.len()),
            ObjectiveTerm::Linear { q } => q.clone(),
            ObjectiveTerm::Quadratic { q_mat, q, .. } => q_mat * x + q,
            ObjectiveTerm::NegLogAffine { weight, a, b } => a * (-weight / (a.dot(x) + b)),
            ObjectiveTerm::Smooth(o) => o.func.gradient(x),
        }
    }

    pub fn hessian(&self, x: &Vector) -> Option<Matrix> {
        let n = x.len();
        match self {
            ObjectiveTerm::Zero | ObjectiveTerm::Linear { .. } => Some(Matrix::zeros(n, n)),
            ObjectiveTerm::Quadratic { q_mat, .. } => Some(q_mat.clone()),
            ObjectiveTerm::NegLogAffine { weight, a, b } => {
                let s = a.dot(x) + b;
                Some(a * a.transpose() * (weight / (s * s)))
            }
            ObjectiveTerm::Smooth(o) => o.func.hessian(x),
        }
    }

    /// True for terms whose minimization reduces to a quadratic program.
    pub fn is_quadratic(&self) -> bool {
        matches!(self, ObjectiveTerm::Zero | ObjectiveTerm::Linear { .. } | ObjectiveTerm::Quadratic { .. })
    }

    /// Hessian and linear part of a quadratic term (`None` for smooth terms).
    pub(crate) fn quadratic_parts(&self, dim: usize) -> Option<(Option<&Matrix>, Vector)> {
        match self {
            ObjectiveTerm::Zero => Some((None, Vector::zeros(dim))),
            ObjectiveTerm::Linear { q } => Some((None, q.clone())),
            ObjectiveTerm::Quadratic { q_mat, q, .. } => Some((Some(q_mat), q.clone())),
            _ => None,
        }
    }
}

/// Per-block feasible set `X_i`.
#[derive(Debug, Clone)]
pub enum FeasibleSet {
    Free,
    /// `lower ≤ x ≤ upper`; entries may be infinite.
    Box { lower: Vector, upper: Vector },
    /// `x ≥ 0`, `1ᵀx ≤ cap`.
    NonNegCappedSum { cap: f64 },
    /// `E x = d` with `E` of full row rank.
    AffineEquality { e: Matrix, d: Vector },
    /// Marker for the splitting set `{z : Σ z_i = 0}`; only meaningful across blocks.
    ZeroSumAcrossBlocks,
}

impl FeasibleSet {
    pub(crate) fn validate(&self, dim: usize) -> Result<(), ProblemError> {
        match self {
            FeasibleSet::Free | FeasibleSet::ZeroSumAcrossBlocks => Ok(()),
            FeasibleSet::Box { lower, upper } => {
                check_len("box lower bound", lower.len(), dim)?;
                check_len("box upper bound", upper.len(), dim)?;
                for (k, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
                    if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                        return Err(ProblemError::InvalidSet(format!("box bounds crossed at entry {k}: [{l}, {u}]")));
                    }
                }
                Ok(())
            }
            FeasibleSet::NonNegCappedSum { cap } => {
                if !(*cap >= 0.0) || !cap.is_finite() {
                    return Err(ProblemError::InvalidSet(format!("capacity must be finite and ≥ 0, got {cap}")));
                }
                Ok(())
            }
            FeasibleSet::AffineEquality { e, d } => {
                if e.ncols() != dim || e.nrows() != d.len() {
                    return Err(ProblemError::DimensionMismatch(format!(
                        "equality matrix is {}x{} with {} right-hand entries, block dimension {dim}",
                        e.nrows(),
                        e.ncols(),
                        d.len()
                    )));
                }
                if prox::numerical_rank(e) < e.nrows() {
                    return Err(ProblemError::InvalidSet("equality matrix is not of full row rank".into()));
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            FeasibleSet::Free | FeasibleSet::ZeroSumAcrossBlocks => true,
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            FeasibleSet::NonNegCappedSum { cap } => x.iter().all(|v| *v >= -tol) && x.sum() <= cap + tol,
            FeasibleSet::AffineEquality { e, d } => {
                let scale = 1.0 + d.amax();
                (e * x - d).amax() <= tol * scale
            }
        }
    }

    /// Euclidean projection, `None` for the cross-block marker.
    pub fn project(&self, x: &Vector) -> Option<Vector> {
        match self {
            FeasibleSet::Free => Some(x.clone()),
            FeasibleSet::Box { lower, upper } => prox::project_box(x, lower, upper).ok(),
            FeasibleSet::NonNegCappedSum { cap } => prox::project_capped_simplexoid(x, *cap).ok(),
            FeasibleSet::AffineEquality { e, d } => {
                let gram = e * e.transpose();
                let chol = gram.cholesky()?;
                let w = chol.solve(&(e * x - d));
                Some(x - e.transpose() * w)
            }
            FeasibleSet::ZeroSumAcrossBlocks => None,
        }
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), ProblemError> {
    if got != want {
        return Err(ProblemError::DimensionMismatch(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Symmetric within 1e-12 (relative) and smallest eigenvalue ≥ −1e-10·‖Q‖.
pub(crate) fn check_psd(q: &Matrix) -> Result<(), ProblemError> {
    let scale = q.amax();
    if scale == 0.0 {
        return Ok(());
    }
    let asym = (q - q.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(ProblemError::NonPsd(format!("asymmetry {asym:.3e} exceeds tolerance")));
    }
    let sym = (q + q.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let norm = eig.amax();
    let min = eig.min();
    if min < -1e-10 * norm {
        return Err(ProblemError::NonPsd(format!("smallest eigenvalue {min:.3e}")));
    }
    Ok(())
}
