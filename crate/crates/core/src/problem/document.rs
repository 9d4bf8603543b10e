//! JSON form of a [`BlockProblem`].
//!
//! ```json
//! { "rhs": [0.0],
//!   "blocks": [ { "dim": 1,
//!                 "objective": { "kind": "quadratic", "matrix": [[1.0]], "q": [0.0], "r": 0.0 },
//!                 "set": { "kind": "box", "lower": [0.0], "upper": [null] },
//!                 "coupling": [[1.0]] } ],
//!   "start": [[0.5]] }
//! ```
//!
//! Matrices are row-major nested arrays. Infinite box bounds are written as `null`.

use serde::{Deserialize, Serialize};

use super::{assemble_problem, BlockProblem, BlockSpec, BlockVector, FeasibleSet, ObjectiveTerm, ProblemError};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDocument {
    pub rhs: Vec<f64>,
    pub blocks: Vec<BlockDocument>,
    /// Optional initial iterate, one array per block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDocument {
    pub dim: usize,
    pub objective: ObjectiveDocument,
    pub set: SetDocument,
    pub coupling: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveDocument {
    Zero,
    Linear { q: Vec<f64> },
    Quadratic { matrix: Vec<Vec<f64>>, q: Vec<f64>, r: f64 },
    NegLogAffine { weight: f64, a: Vec<f64>, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetDocument {
    Free,
    Box { lower: Vec<Option<f64>>, upper: Vec<Option<f64>> },
    NonnegCappedSum { cap: f64 },
    AffineEquality { matrix: Vec<Vec<f64>>, rhs: Vec<f64> },
    ZeroSumAcrossBlocks,
}

impl ProblemDocument {
    pub fn parse(text: &str) -> Result<Self, ProblemError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String, ProblemError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_problem(p: &BlockProblem, start: Option<&BlockVector>) -> Result<Self, ProblemError> {
        let blocks = p
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| {
                Ok(BlockDocument {
                    dim: b.dim,
                    objective: objective_doc(&b.objective)
                        .ok_or_else(|| ProblemError::Document(format!("block {i}: smooth oracles are not serializable")))?,
                    set: set_doc(&b.set),
                    coupling: rows_of(&b.coupling),
                })
            })
            .collect::<Result<Vec<_>, ProblemError>>()?;
        Ok(Self { rhs: p.rhs().iter().copied().collect(), blocks, start: start.map(|s| s.to_nested()) })
    }

    pub fn to_problem(&self) -> Result<BlockProblem, ProblemError> {
        let m = self.rhs.len();
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let ctx = |e: ProblemError| e.in_block(i);
                let coupling = matrix_from_rows(&b.coupling, m, b.dim).map_err(ctx)?;
                let objective = match &b.objective {
                    ObjectiveDocument::Zero => ObjectiveTerm::Zero,
                    ObjectiveDocument::Linear { q } => ObjectiveTerm::Linear { q: Vector::from_column_slice(q) },
                    ObjectiveDocument::Quadratic { matrix, q, r } => ObjectiveTerm::Quadratic {
                        q_mat: matrix_from_rows(matrix, b.dim, b.dim).map_err(ctx)?,
                        q: Vector::from_column_slice(q),
                        r: *r,
                    },
                    ObjectiveDocument::NegLogAffine { weight, a, b } => {
                        ObjectiveTerm::NegLogAffine { weight: *weight, a: Vector::from_column_slice(a), b: *b }
                    }
                };
                let set = match &b.set {
                    SetDocument::Free => FeasibleSet::Free,
                    SetDocument::Box { lower, upper } => FeasibleSet::Box {
                        lower: Vector::from_iterator(lower.len(), lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY))),
                        upper: Vector::from_iterator(upper.len(), upper.iter().map(|v| v.unwrap_or(f64::INFINITY))),
                    },
                    SetDocument::NonnegCappedSum { cap } => FeasibleSet::NonNegCappedSum { cap: *cap },
                    SetDocument::AffineEquality { matrix, rhs } => FeasibleSet::AffineEquality {
                        e: matrix_from_rows(matrix, rhs.len(), b.dim).map_err(ctx)?,
                        d: Vector::from_column_slice(rhs),
                    },
                    SetDocument::ZeroSumAcrossBlocks => FeasibleSet::ZeroSumAcrossBlocks,
                };
                Ok(BlockSpec { dim: b.dim, objective, set, coupling })
            })
            .collect::<Result<Vec<_>, ProblemError>>()?;
        assemble_problem(blocks, Vector::from_column_slice(&self.rhs))
    }

    /// The optional start point, checked against the block dimensions.
    pub fn start_vector(&self) -> Result<Option<BlockVector>, ProblemError> {
        let Some(start) = &self.start else { return Ok(None) };
        if start.len() != self.blocks.len() {
            return Err(ProblemError::DimensionMismatch(format!(
                "start has {} segments, problem has {} blocks",
                start.len(),
                self.blocks.len()
            )));
        }
        for (i, (s, b)) in start.iter().zip(&self.blocks).enumerate() {
            if s.len() != b.dim {
                return Err(ProblemError::DimensionMismatch(format!(
                    "block {i}: start has length {}, expected {}",
                    s.len(),
                    b.dim
                )));
            }
        }
        Ok(Some(BlockVector::new(start.iter().map(|s| Vector::from_column_slice(s)).collect())))
    }
}

fn objective_doc(t: &ObjectiveTerm) -> Option<ObjectiveDocument> {
    Some(match t {
        ObjectiveTerm::Zero => ObjectiveDocument::Zero,
        ObjectiveTerm::Linear { q } => ObjectiveDocument::Linear { q: q.iter().copied().collect() },
        ObjectiveTerm::Quadratic { q_mat, q, r } => {
            ObjectiveDocument::Quadratic { matrix: rows_of(q_mat), q: q.iter().copied().collect(), r: *r }
        }
        ObjectiveTerm::NegLogAffine { weight, a, b } => {
            ObjectiveDocument::NegLogAffine { weight: *weight, a: a.iter().copied().collect(), b: *b }
        }
        ObjectiveTerm::Smooth(_) => return None,
    })
}

fn set_doc(s: &FeasibleSet) -> SetDocument {
    let finite = |v: &f64| if v.is_finite() { Some(*v) } else { None };
    match s {
        FeasibleSet::Free => SetDocument::Free,
        FeasibleSet::Box { lower, upper } => SetDocument::Box {
            lower: lower.iter().map(finite).collect(),
            upper: upper.iter().map(finite).collect(),
        },
        FeasibleSet::NonNegCappedSum { cap } => SetDocument::NonnegCappedSum { cap: *cap },
        FeasibleSet::AffineEquality { e, d } => {
            SetDocument::AffineEquality { matrix: rows_of(e), rhs: d.iter().copied().collect() }
        }
        FeasibleSet::ZeroSumAcrossBlocks => SetDocument::ZeroSumAcrossBlocks,
    }
}

pub(crate) fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<Matrix, ProblemError> {
    if rows.len() != nrows {
        return Err(ProblemError::DimensionMismatch(format!("matrix has {} rows, expected {nrows}", rows.len())));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(ProblemError::DimensionMismatch(format!(
            "matrix row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ProblemDocument {
        ProblemDocument {
            rhs: vec![1.0, -0.5],
            blocks: vec![
                BlockDocument {
                    dim: 2,
                    objective: ObjectiveDocument::Quadratic {
                        matrix: vec![vec![2.0, 0.5], vec![0.5, 1.0]],
                        q: vec![0.1, -0.2],
                        r: 3.0,
                    },
                    set: SetDocument::Box { lower: vec![Some(0.0), None], upper: vec![Some(1.0), None] },
                    coupling: vec![vec![1.0, 2.0], vec![0.0, -1.0]],
                },
                BlockDocument {
                    dim: 1,
                    objective: ObjectiveDocument::NegLogAffine { weight: 1.0, a: vec![1.0], b: 1.0 },
                    set: SetDocument::NonnegCappedSum { cap: 10.0 },
                    coupling: vec![vec![1.0], vec![1.0]],
                },
            ],
            start: Some(vec![vec![0.0, 0.0], vec![1.0]]),
        }
    }

    #[test]
    fn document_round_trips_through_problem() {
        let doc = sample();
        let p = doc.to_problem().unwrap();
        let start = doc.start_vector().unwrap();
        let back = ProblemDocument::from_problem(&p, start.as_ref()).unwrap();
        assert_eq!(back, doc);
        match &p.block(0).set {
            FeasibleSet::Box { upper, .. } => assert_eq!(upper[1], f64::INFINITY),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_coupling_names_the_block() {
        let mut doc = sample();
        doc.blocks[1].coupling = vec![vec![1.0]];
        let err = doc.to_problem().unwrap_err();
        assert!(err.to_string().contains("block 1"), "{err}");
    }

    proptest! {
        #[test]
        fn finite_doubles_round_trip_exactly(vals in proptest::collection::vec(-1e300f64..1e300, 6)) {
            let doc = ProblemDocument {
                rhs: vec![vals[0], vals[1]],
                blocks: vec![BlockDocument {
                    dim: 2,
                    objective: ObjectiveDocument::Linear { q: vec![vals[2], vals[3]] },
                    set: SetDocument::Free,
                    coupling: vec![vec![vals[4], vals[5]], vec![vals[5], vals[4]]],
                }],
                start: None,
            };
            let text = doc.to_json().unwrap();
            let back = ProblemDocument::parse(&text).unwrap();
            prop_assert_eq!(back, doc);
        }
    }
}
