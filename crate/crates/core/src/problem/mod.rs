//! The canonical block-structured problem
//!
//! ```text
//!   min  f_1(x_1) + ... + f_N(x_N)
//!   s.t. A_1 x_1 + ... + A_N x_N = c,   x_i ∈ X_i
//! ```
//!
//! together with the objective-term and feasible-set vocabulary shared by every engine.
//! Everything here is immutable after [`assemble_problem`] and safe to share across threads.

mod document;
mod terms;

pub use document::{BlockDocument, ObjectiveDocument, ProblemDocument, SetDocument};
pub use terms::{FeasibleSet, ObjectiveTerm, SmoothFunction, SmoothOracle};
pub(crate) use terms::check_psd;

use crate::{Matrix, Vector};
use thiserror::Error;

/// Distance from a feasible set tolerated before the indicator evaluates to `+∞`.
pub const SET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("problem has no blocks")]
    Empty,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid feasible set: {0}")]
    InvalidSet(String),
    #[error("quadratic term is not symmetric positive semidefinite: {0}")]
    NonPsd(String),
    #[error("invalid objective term: {0}")]
    InvalidObjective(String),
    #[error("problem document: {0}")]
    Document(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One block of the problem as supplied by the caller.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub dim: usize,
    pub objective: ObjectiveTerm,
    pub set: FeasibleSet,
    /// Coupling matrix `A_i`, `m × dim`.
    pub coupling: Matrix,
}

impl BlockSpec {
    pub fn new(objective: ObjectiveTerm, set: FeasibleSet, coupling: Matrix) -> Self {
        Self { dim: coupling.ncols(), objective, set, coupling }
    }
}

/// A validated N-block instance. Construct with [`assemble_problem`].
#[derive(Debug, Clone)]
pub struct BlockProblem {
    blocks: Vec<BlockSpec>,
    rhs: Vector,
}

/// Validates the blocks and right-hand side and returns the assembled problem.
pub fn assemble_problem(blocks: Vec<BlockSpec>, rhs: Vector) -> Result<BlockProblem, ProblemError> {
    if blocks.is_empty() {
        return Err(ProblemError::Empty);
    }
    let m = rhs.len();
    for (i, b) in blocks.iter().enumerate() {
        if b.dim == 0 {
            return Err(ProblemError::DimensionMismatch(format!("block {i} has dimension 0")));
        }
        if b.coupling.nrows() != m {
            return Err(ProblemError::DimensionMismatch(format!(
                "block {i}: coupling has {} rows, right-hand side has {m}",
                b.coupling.nrows()
            )));
        }
        if b.coupling.ncols() != b.dim {
            return Err(ProblemError::DimensionMismatch(format!(
                "block {i}: coupling has {} columns, block dimension is {}",
                b.coupling.ncols(),
                b.dim
            )));
        }
        if b.coupling.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::DimensionMismatch(format!("block {i}: coupling has non-finite entries")));
        }
        b.objective.validate(b.dim).map_err(|e| e.in_block(i))?;
        b.set.validate(b.dim).map_err(|e| e.in_block(i))?;
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(ProblemError::DimensionMismatch("right-hand side has non-finite entries".into()));
    }
    let marked: Vec<usize> = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.set, FeasibleSet::ZeroSumAcrossBlocks))
        .map(|(i, _)| i)
        .collect();
    if let Some(&first) = marked.first() {
        if marked.iter().any(|&i| blocks[i].dim != blocks[first].dim) {
            return Err(ProblemError::InvalidSet(
                "blocks marked zero-sum-across-blocks must share one dimension".into(),
            ));
        }
    }
    Ok(BlockProblem { blocks, rhs })
}

impl ProblemError {
    fn in_block(self, i: usize) -> Self {
        match self {
            ProblemError::DimensionMismatch(s) => ProblemError::DimensionMismatch(format!("block {i}: {s}")),
            ProblemError::InvalidSet(s) => ProblemError::InvalidSet(format!("block {i}: {s}")),
            ProblemError::NonPsd(s) => ProblemError::NonPsd(format!("block {i}: {s}")),
            ProblemError::InvalidObjective(s) => ProblemError::InvalidObjective(format!("block {i}: {s}")),
            other => other,
        }
    }
}

impl BlockProblem {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Number of coupling rows `m`.
    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &BlockSpec {
        &self.blocks[i]
    }

    pub fn rhs(&self) -> &Vector {
        &self.rhs
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    /// Returns the problem with every block reordered by `order` (a permutation of `0..N`).
    pub fn permuted(&self, order: &[usize]) -> BlockProblem {
        BlockProblem { blocks: order.iter().map(|&i| self.blocks[i].clone()).collect(), rhs: self.rhs.clone() }
    }

    /// Multiplies every coupling matrix and the right-hand side by `factor`.
    pub fn row_scaled(&self, factor: f64) -> BlockProblem {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockSpec { coupling: &b.coupling * factor, ..b.clone() })
            .collect();
        BlockProblem { blocks, rhs: &self.rhs * factor }
    }

    pub(crate) fn check_vector(&self, x: &BlockVector) -> Result<(), ProblemError> {
        if x.num_blocks() != self.blocks.len() {
            return Err(ProblemError::DimensionMismatch(format!(
                "block vector has {} segments, problem has {} blocks",
                x.num_blocks(),
                self.blocks.len()
            )));
        }
        for (i, (seg, b)) in x.segments().iter().zip(&self.blocks).enumerate() {
            if seg.len() != b.dim {
                return Err(ProblemError::DimensionMismatch(format!(
                    "block {i}: segment has length {}, expected {}",
                    seg.len(),
                    b.dim
                )));
            }
        }
        Ok(())
    }

    /// `A_i x_i` for every block.
    pub fn coupling_products(&self, x: &BlockVector) -> Vec<Vector> {
        self.blocks.iter().zip(x.segments()).map(|(b, xi)| &b.coupling * xi).collect()
    }

    /// `Σ_i A_i x_i − c`.
    pub fn primal_residual(&self, x: &BlockVector) -> Result<Vector, ProblemError> {
        self.check_vector(x)?;
        Ok(residual_from_products(&self.coupling_products(x), &self.rhs))
    }

    /// `Σ_i f_i(x_i)` with indicator semantics for the feasible sets.
    pub fn objective_value(&self, x: &BlockVector) -> Result<f64, ProblemError> {
        self.check_vector(x)?;
        Ok(self.objective_unchecked(x))
    }

    pub(crate) fn objective_unchecked(&self, x: &BlockVector) -> f64 {
        let mut total = 0.0;
        for (b, xi) in self.blocks.iter().zip(x.segments()) {
            if !b.set.contains(xi, SET_TOLERANCE) {
                return f64::INFINITY;
            }
            total += b.objective.value(xi);
        }
        // zero-sum marker: the marked segments must sum to zero
        let mut marked = self
            .blocks
            .iter()
            .zip(x.segments())
            .filter(|(b, _)| matches!(b.set, FeasibleSet::ZeroSumAcrossBlocks))
            .map(|(_, xi)| xi);
        if let Some(first) = marked.next() {
            let sum = marked.fold(first.clone(), |acc, xi| acc + xi);
            if sum.amax() > SET_TOLERANCE {
                return f64::INFINITY;
            }
        }
        total
    }

    /// `ρ · max_i ‖A_i (x_i^k − x_i^{k−1})‖₂`, a stopping heuristic for the dual residual.
    pub fn dual_residual_metric(
        &self,
        x_prev: &BlockVector,
        x_curr: &BlockVector,
        rho: f64,
    ) -> Result<f64, ProblemError> {
        self.check_vector(x_prev)?;
        self.check_vector(x_curr)?;
        if !(rho > 0.0) {
            return Err(ProblemError::InvalidObjective(format!("rho must be positive, got {rho}")));
        }
        Ok(self.dual_metric_unchecked(x_prev, x_curr, rho))
    }

    pub(crate) fn dual_metric_unchecked(&self, x_prev: &BlockVector, x_curr: &BlockVector, rho: f64) -> f64 {
        let worst = self
            .blocks
            .iter()
            .zip(x_prev.segments().iter().zip(x_curr.segments()))
            .map(|(b, (p, c))| (&b.coupling * (c - p)).norm())
            .fold(0.0_f64, |acc, v| if v > acc || v.is_nan() { v } else { acc });
        rho * worst
    }
}

/// `(Σ_i u_i) − c`, summed from zero in block order.
pub(crate) fn residual_from_products(products: &[Vector], rhs: &Vector) -> Vector {
    let mut sum = Vector::zeros(rhs.len());
    for u in products {
        sum += u;
    }
    sum - rhs
}

/// `(Σ_{j≠i} u_j) − c`, summed from zero in block order.
pub(crate) fn others_minus_rhs(products: &[Vector], skip: usize, rhs: &Vector) -> Vector {
    let mut sum = Vector::zeros(rhs.len());
    for (j, u) in products.iter().enumerate() {
        if j != skip {
            sum += u;
        }
    }
    sum - rhs
}

/// Block-partitioned vector `x = (x_1, ..., x_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    segments: Vec<Vector>,
}

impl BlockVector {
    pub fn new(segments: Vec<Vector>) -> Self {
        Self { segments }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self { segments: dims.iter().map(|&n| Vector::zeros(n)).collect() }
    }

    pub fn from_slices(parts: &[&[f64]]) -> Self {
        Self { segments: parts.iter().map(|p| Vector::from_column_slice(p)).collect() }
    }

    pub fn num_blocks(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[Vector] {
        &self.segments
    }

    pub fn segment(&self, i: usize) -> &Vector {
        &self.segments[i]
    }

    pub fn segment_mut(&mut self, i: usize) -> &mut Vector {
        &mut self.segments[i]
    }

    pub fn into_segments(self) -> Vec<Vector> {
        self.segments
    }

    /// Concatenation in block order.
    pub fn flatten(&self) -> Vector {
        let data: Vec<f64> = self.segments.iter().flat_map(|s| s.iter().copied()).collect();
        Vector::from_vec(data)
    }

    pub fn from_flat(flat: &Vector, dims: &[usize]) -> Self {
        let mut offset = 0;
        let segments = dims
            .iter()
            .map(|&n| {
                let s = flat.rows(offset, n).into_owned();
                offset += n;
                s
            })
            .collect();
        Self { segments }
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.segments.iter().map(|s| s.iter().copied().collect()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.segments.iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Exact equality of every entry, including the sign of zero.
    pub fn bitwise_eq(&self, other: &BlockVector) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn zero_block(coupling: Matrix) -> BlockSpec {
        BlockSpec::new(ObjectiveTerm::Zero, FeasibleSet::Free, coupling)
    }

    fn diverge3() -> BlockProblem {
        assemble_problem(
            vec![
                zero_block(dmatrix![1.0; 1.0; 1.0]),
                zero_block(dmatrix![1.0; 1.0; 2.0]),
                zero_block(dmatrix![1.0; 2.0; 2.0]),
            ],
            Vector::zeros(3),
        )
        .unwrap()
    }

    #[test]
    fn minimal_instance() {
        let p = assemble_problem(vec![zero_block(dmatrix![1.0])], dvector![0.0]).unwrap();
        assert_eq!(p.num_blocks(), 1);
        assert_eq!(p.rows(), 1);
    }

    #[test]
    fn divergence_fixture_is_feasible_at_origin() {
        let p = diverge3();
        assert_eq!(p.num_blocks(), 3);
        let r = p.primal_residual(&BlockVector::zeros(&[1, 1, 1])).unwrap();
        assert_eq!(r, dvector![0.0, 0.0, 0.0]);
    }

    #[test]
    fn row_count_mismatch_is_rejected() {
        let err = assemble_problem(
            vec![zero_block(Matrix::zeros(2, 1)), zero_block(Matrix::zeros(3, 1))],
            Vector::zeros(2),
        )
        .unwrap_err();
        match err {
            ProblemError::DimensionMismatch(msg) => assert!(msg.contains("block 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crossed_box_and_negative_cap_are_invalid_sets() {
        let crossed = FeasibleSet::Box { lower: dvector![1.0], upper: dvector![0.0] };
        let err = assemble_problem(
            vec![BlockSpec::new(ObjectiveTerm::Zero, crossed, dmatrix![1.0])],
            dvector![0.0],
        )
        .unwrap_err();
        assert!(matches!(err, ProblemError::InvalidSet(_)));
        let err = assemble_problem(
            vec![BlockSpec::new(ObjectiveTerm::Zero, FeasibleSet::NonNegCappedSum { cap: -1.0 }, dmatrix![1.0])],
            dvector![0.0],
        )
        .unwrap_err();
        assert!(matches!(err, ProblemError::InvalidSet(_)));
    }

    #[test]
    fn indefinite_quadratic_is_rejected() {
        let q = ObjectiveTerm::Quadratic { q_mat: dmatrix![1.0, 0.0; 0.0, -1.0], q: dvector![0.0, 0.0], r: 0.0 };
        let err = assemble_problem(vec![BlockSpec::new(q, FeasibleSet::Free, Matrix::zeros(1, 2))], dvector![0.0])
            .unwrap_err();
        assert!(matches!(err, ProblemError::NonPsd(_)));
    }

    #[test]
    fn residual_examples() {
        let p = assemble_problem(vec![zero_block(dmatrix![2.0])], dvector![3.0]).unwrap();
        let r = p.primal_residual(&BlockVector::from_slices(&[&[1.0]])).unwrap();
        assert_eq!(r, dvector![-1.0]);

        let p = diverge3();
        let r = p.primal_residual(&BlockVector::from_slices(&[&[1.0], &[1.0], &[1.0]])).unwrap();
        // row sums of the column matrix [A₁ A₂ A₃]
        let cols = dmatrix![1.0, 1.0, 1.0; 1.0, 1.0, 2.0; 1.0, 2.0, 2.0];
        let expected = Vector::from_fn(3, |i, _| cols.row(i).sum());
        assert_eq!(r, expected);
        assert_eq!(r, dvector![3.0, 4.0, 5.0]);
    }

    #[test]
    fn objective_examples() {
        let p = diverge3();
        assert_eq!(p.objective_value(&BlockVector::from_slices(&[&[4.0], &[-1.0], &[2.0]])).unwrap(), 0.0);

        let nla = ObjectiveTerm::NegLogAffine { weight: 1.0, a: dvector![1.0, 1.0], b: 1.0 };
        let p = assemble_problem(vec![BlockSpec::new(nla, FeasibleSet::Free, Matrix::zeros(1, 2))], dvector![0.0])
            .unwrap();
        assert_eq!(p.objective_value(&BlockVector::zeros(&[2])).unwrap(), 0.0);

        let quad = ObjectiveTerm::Quadratic { q_mat: Matrix::identity(2, 2) * 2.0, q: Vector::zeros(2), r: 0.0 };
        let p = assemble_problem(vec![BlockSpec::new(quad, FeasibleSet::Free, Matrix::zeros(1, 2))], dvector![0.0])
            .unwrap();
        assert_eq!(p.objective_value(&BlockVector::from_slices(&[&[1.0, 1.0]])).unwrap(), 2.0);
    }

    #[test]
    fn objective_is_infinite_outside_the_set() {
        let set = FeasibleSet::Box { lower: dvector![0.0], upper: dvector![1.0] };
        let p = assemble_problem(vec![BlockSpec::new(ObjectiveTerm::Zero, set, dmatrix![1.0])], dvector![0.0])
            .unwrap();
        assert_eq!(p.objective_value(&BlockVector::from_slices(&[&[1.0 + 1e-10]])).unwrap(), 0.0);
        assert_eq!(p.objective_value(&BlockVector::from_slices(&[&[1.1]])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn dual_metric_examples() {
        let p = assemble_problem(vec![zero_block(dmatrix![1.0])], dvector![0.0]).unwrap();
        let a = BlockVector::from_slices(&[&[0.0]]);
        let b = BlockVector::from_slices(&[&[3.0]]);
        assert_eq!(p.dual_residual_metric(&a, &a, 2.0).unwrap(), 0.0);
        assert_eq!(p.dual_residual_metric(&a, &b, 2.0).unwrap(), 6.0);

        // two consecutive divergence-fixture iterates, formula evaluated by hand:
        // Δx = (0.5, -1, 2): A1Δ = (0.5,0.5,0.5), A2Δ = (-1,-1,-2), A3Δ = (2,4,4)
        let p = diverge3();
        let prev = BlockVector::from_slices(&[&[1.0], &[1.0], &[1.0]]);
        let curr = BlockVector::from_slices(&[&[1.5], &[0.0], &[3.0]]);
        let expected = 1.5 * 36.0_f64.sqrt();
        assert!((p.dual_residual_metric(&prev, &curr, 1.5).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn wrong_segment_length_is_a_dimension_mismatch() {
        let p = diverge3();
        let x = BlockVector::from_slices(&[&[1.0], &[1.0, 2.0], &[1.0]]);
        assert!(matches!(p.primal_residual(&x), Err(ProblemError::DimensionMismatch(_))));
        assert!(matches!(p.objective_value(&x), Err(ProblemError::DimensionMismatch(_))));
    }
}
