use super::EngineError;
use crate::problem::{BlockProblem, BlockVector};
use crate::Matrix;

/// Proximal weights `P_i` for the proximal Jacobi engine.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Prox {
    #[default]
    None,
    /// `P_i = s · I` for every block.
    Scalar(f64),
    /// `P_i = s · ρ A_iᵀA_i`.
    CouplingScaled(f64),
    /// Explicit symmetric PSD matrix per block.
    PerBlock(Vec<Matrix>),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Penalty parameter `ρ > 0`.
    pub rho: f64,
    /// Dual damping `γ > 0` of the proximal Jacobi update.
    pub gamma: f64,
    /// Correction step `α ∈ (0, 1)` of Gaussian back substitution.
    pub alpha: f64,
    pub prox: Prox,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub divergence_threshold: f64,
    pub seed: u64,
    /// Block evaluation order. Changes results for Gauss-Seidel sweeps only.
    pub update_order: Option<Vec<usize>>,
    /// Solve independent block updates on the rayon pool.
    pub parallel: bool,
    /// Record wall-clock time of block updates. Off by default so traces are reproducible.
    pub record_timing: bool,
    /// Starting point; defaults to the projection of zero onto each block's set.
    pub start: Option<BlockVector>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            gamma: 1.0,
            alpha: 0.5,
            prox: Prox::None,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            max_iter: 10_000,
            divergence_threshold: 1e8,
            seed: 0,
            update_order: None,
            parallel: false,
            record_timing: false,
            start: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("rho", self.rho),
            ("gamma", self.gamma),
            ("tol_primal", self.tol_primal),
            ("tol_dual", self.tol_dual),
            ("divergence_threshold", self.divergence_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EngineError::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EngineError::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        match &self.prox {
            Prox::Scalar(s) | Prox::CouplingScaled(s) if !(*s >= 0.0) || !s.is_finite() => {
                Err(EngineError::InvalidConfig(format!("proximal weight must be finite and ≥ 0, got {s}")))
            }
            _ => Ok(()),
        }
    }

    /// Evaluation order, checked to be a permutation of `0..n`.
    pub(crate) fn order(&self, n: usize) -> Result<Vec<usize>, EngineError> {
        match &self.update_order {
            None => Ok((0..n).collect()),
            Some(order) => {
                let mut seen = vec![false; n];
                if order.len() != n {
                    return Err(EngineError::InvalidConfig(format!("update order has {} entries for {n} blocks", order.len())));
                }
                for &i in order {
                    if i >= n || seen[i] {
                        return Err(EngineError::InvalidConfig(format!("update order is not a permutation of 0..{n}")));
                    }
                    seen[i] = true;
                }
                Ok(order.clone())
            }
        }
    }

    /// Per-block proximal matrices; `None` where the weight is zero.
    pub(crate) fn prox_matrices(&self, p: &BlockProblem) -> Result<Vec<Option<Matrix>>, EngineError> {
        let nonzero = |m: Matrix| if m.iter().all(|v| *v == 0.0) { None } else { Some(m) };
        let out = match &self.prox {
            Prox::None => vec![None; p.num_blocks()],
            Prox::Scalar(s) => p.blocks().iter().map(|b| nonzero(Matrix::identity(b.dim, b.dim) * *s)).collect(),
            Prox::CouplingScaled(s) => p
                .blocks()
                .iter()
                .map(|b| nonzero(b.coupling.transpose() * &b.coupling * (*s * self.rho)))
                .collect(),
            Prox::PerBlock(ms) => {
                if ms.len() != p.num_blocks() {
                    return Err(EngineError::InvalidConfig(format!(
                        "{} proximal matrices for {} blocks",
                        ms.len(),
                        p.num_blocks()
                    )));
                }
                let mut out = Vec::with_capacity(ms.len());
                for (i, (m, b)) in ms.iter().zip(p.blocks()).enumerate() {
                    if m.nrows() != b.dim || m.ncols() != b.dim {
                        return Err(EngineError::InvalidConfig(format!(
                            "block {i}: proximal matrix is {}x{}, block dimension {}",
                            m.nrows(),
                            m.ncols(),
                            b.dim
                        )));
                    }
                    crate::problem::check_psd(m)
                        .map_err(|e| EngineError::InvalidConfig(format!("block {i}: proximal matrix: {e}")))?;
                    out.push(nonzero(m.clone()));
                }
                out
            }
        };
        Ok(out)
    }

    /// Starting point, validated against `p` or built by projecting zero.
    pub(crate) fn start_point(&self, p: &BlockProblem) -> Result<BlockVector, EngineError> {
        match &self.start {
            Some(x) => {
                p.check_vector(x)?;
                Ok(x.clone())
            }
            None => {
                let segments = p
                    .blocks()
                    .iter()
                    .map(|b| b.set.project(&crate::Vector::zeros(b.dim)).unwrap_or_else(|| crate::Vector::zeros(b.dim)))
                    .collect();
                Ok(BlockVector::new(segments))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = SolverConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.tol_primal, 1e-6);
        assert_eq!(cfg.divergence_threshold, 1e8);
    }

    #[test]
    fn ranges_are_enforced() {
        for cfg in [
            SolverConfig { rho: 0.0, ..Default::default() },
            SolverConfig { gamma: -1.0, ..Default::default() },
            SolverConfig { alpha: 1.0, ..Default::default() },
            SolverConfig { tol_dual: f64::NAN, ..Default::default() },
            SolverConfig { prox: Prox::Scalar(-0.1), ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(EngineError::InvalidConfig(_))));
        }
    }

    #[test]
    fn order_must_be_a_permutation() {
        let cfg = SolverConfig { update_order: Some(vec![1, 1, 0]), ..Default::default() };
        assert!(cfg.order(3).is_err());
        let cfg = SolverConfig { update_order: Some(vec![2, 0, 1]), ..Default::default() };
        assert_eq!(cfg.order(3).unwrap(), vec![2, 0, 1]);
    }
}
