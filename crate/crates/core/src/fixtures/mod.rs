//! Bundled instances for the command-line tool and the test suites, and a centralized
//! reference solver for quadratic block problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engines::{Prox, SolverConfig};
use crate::offload::{self, OffloadSpec};
use crate::problem::{
    assemble_problem, BlockProblem, BlockSpec, BlockVector, FeasibleSet, ObjectiveTerm, ProblemDocument, ProblemError,
};
use crate::prox::{numerical_rank, solve_ineq_qp, EqQpFactor, InequalityQp, ProxError};
use crate::scopf;
use crate::{Matrix, Vector};

/// The three-column instance `A₁ = (1,1,1)ᵀ, A₂ = (1,1,2)ᵀ, A₃ = (1,2,2)ᵀ, c = 0, f = 0` on
/// which the direct Gauss-Seidel extension diverges.
pub fn diverge3() -> BlockProblem {
    let cols = [[1.0, 1.0, 1.0], [1.0, 1.0, 2.0], [1.0, 2.0, 2.0]];
    let blocks = cols
        .iter()
        .map(|c| BlockSpec::new(ObjectiveTerm::Zero, FeasibleSet::Free, Matrix::from_column_slice(3, 1, c)))
        .collect();
    assemble_problem(blocks, Vector::zeros(3)).expect("fixture is valid")
}

/// Starting point for [`diverge3`]. The origin is already a solution, so runs start away
/// from it.
pub fn diverge3_start() -> BlockVector {
    BlockVector::from_slices(&[&[1.0], &[1.0], &[1.0]])
}

/// Proximal Jacobi settings that restore convergence on [`diverge3`]:
/// `P_i = 2ρA_iᵀA_i`, `γ = 0.5`.
pub fn diverge3_prox_config() -> SolverConfig {
    SolverConfig { prox: Prox::CouplingScaled(2.0), gamma: 0.5, ..Default::default() }
}

/// Seeded strongly convex instance with `n_blocks` quadratic blocks, `1 ≤ n_i ≤ 3` and
/// `max n_i ≤ m ≤ min(Σ n_i, 20)`.
///
/// `f_i(x) = ½xᵀQ_ix + q_iᵀx` with `Q_i = B_iB_iᵀ + 0.5I`, random dense `A_i` and
/// `c = Σ A_i x̂_i` for a random `x̂`, so the coupling is consistent. Draws whose stacked
/// coupling has condition number above 20 are rejected.
pub fn strongly_convex(seed: u64, n_blocks: usize) -> BlockProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let p = draw_strongly_convex(&mut rng, n_blocks);
        if coupling_condition(&p) <= MAX_COUPLING_CONDITION {
            return p;
        }
    }
}

/// Draws whose stacked coupling is worse conditioned than this are redrawn from the same
/// stream; near-singular couplings make every ADMM variant crawl.
const MAX_COUPLING_CONDITION: f64 = 20.0;

fn coupling_condition(p: &BlockProblem) -> f64 {
    let cols: Vec<Vector> =
        p.blocks().iter().flat_map(|b| b.coupling.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>()).collect();
    let sv = Matrix::from_columns(&cols).singular_values();
    let k = p.rows().min(p.total_dim());
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if sv.len() < k || smin <= 0.0 {
        return f64::INFINITY;
    }
    sv.max() / smin
}

fn draw_strongly_convex(rng: &mut ChaCha8Rng, n_blocks: usize) -> BlockProblem {
    let dims: Vec<usize> = (0..n_blocks).map(|_| rng.random_range(1..=3)).collect();
    let lo = *dims.iter().max().expect("at least one block");
    let hi = dims.iter().sum::<usize>().min(20);
    let m = rng.random_range(lo..=hi);
    let mut rhs = Vector::zeros(m);
    let mut blocks = Vec::with_capacity(n_blocks);
    for &n in &dims {
        let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q_mat = &b * b.transpose() + Matrix::identity(n, n) * 0.5;
        let q = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let x_hat = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        rhs += &a * x_hat;
        blocks.push(BlockSpec::new(ObjectiveTerm::Quadratic { q_mat, q, r: 0.0 }, FeasibleSet::Free, a));
    }
    assemble_problem(blocks, rhs).expect("generated instance is valid")
}

/// Seeded strongly convex instance whose coupling columns are mutually orthogonal across
/// blocks (they are taken from one orthogonal matrix), with `n_i` columns per block.
pub fn orthogonal_blocks(seed: u64, dims: &[usize]) -> BlockProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = dims.iter().sum();
    let m = total + 1;
    let g = Matrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let mut rhs = Vector::zeros(m);
    let mut blocks = Vec::new();
    let mut col = 0;
    for &n in dims {
        let a = q.columns(col, n).into_owned();
        col += n;
        let diag = Vector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        let lin = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        rhs += &a * Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        blocks.push(BlockSpec::new(
            ObjectiveTerm::Quadratic { q_mat: Matrix::from_diagonal(&diag), q: lin, r: 0.0 },
            FeasibleSet::Free,
            a,
        ));
    }
    assemble_problem(blocks, rhs).expect("generated instance is valid")
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("block {0}: the centralized solver handles quadratic objectives only")]
    NonQuadratic(usize),
    #[error("block {0}: the zero-sum marker has no centralized counterpart")]
    Marker(usize),
    #[error(transparent)]
    Solver(#[from] ProxError),
}

/// Solves a problem with quadratic objectives as one stacked QP: exact KKT solve when there
/// are no inequalities, interior point otherwise.
///
/// Returns the minimizer and `objective_value` at it.
pub fn centralized_qp(p: &BlockProblem) -> Result<(BlockVector, f64), OracleError> {
    let dims = p.dims();
    let n = p.total_dim();
    let mut q_mat = Matrix::zeros(n, n);
    let mut q = Vector::zeros(n);
    let mut eq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut ineq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let coupling = Matrix::from_fn(p.rows(), n, |r, c| {
        let (mut i, mut off) = (0, 0);
        while c >= off + dims[i] {
            off += dims[i];
            i += 1;
        }
        p.block(i).coupling[(r, c - off)]
    });
    let mut off = 0;
    for (i, b) in p.blocks().iter().enumerate() {
        let (qm, lin) = b.objective.quadratic_parts(b.dim).ok_or(OracleError::NonQuadratic(i))?;
        if let Some(qm) = qm {
            q_mat.view_mut((off, off), (b.dim, b.dim)).copy_from(qm);
        }
        q.rows_mut(off, b.dim).copy_from(&lin);
        match &b.set {
            FeasibleSet::Free => {}
            FeasibleSet::Box { lower, upper } => {
                for j in 0..b.dim {
                    if upper[j].is_finite() {
                        ineq_rows.push((vec![(off + j, 1.0)], upper[j]));
                    }
                    if lower[j].is_finite() {
                        ineq_rows.push((vec![(off + j, -1.0)], -lower[j]));
                    }
                }
            }
            FeasibleSet::NonNegCappedSum { cap } => {
                for j in 0..b.dim {
                    ineq_rows.push((vec![(off + j, -1.0)], 0.0));
                }
                ineq_rows.push(((0..b.dim).map(|j| (off + j, 1.0)).collect(), *cap));
            }
            FeasibleSet::AffineEquality { e, d } => {
                for r in 0..e.nrows() {
                    eq_rows.push(((0..b.dim).map(|j| (off + j, e[(r, j)])).collect(), d[r]));
                }
            }
            FeasibleSet::ZeroSumAcrossBlocks => return Err(OracleError::Marker(i)),
        }
        off += b.dim;
    }
    let dense = |rows: &[(Vec<(usize, f64)>, f64)]| {
        let mut m = Matrix::zeros(rows.len(), n);
        for (r, (entries, _)) in rows.iter().enumerate() {
            for &(c, v) in entries {
                m[(r, c)] = v;
            }
        }
        (m, Vector::from_iterator(rows.len(), rows.iter().map(|(_, v)| *v)))
    };
    let (extra_eq, extra_rhs) = dense(&eq_rows);
    let mut eq_mat = Matrix::zeros(p.rows() + extra_eq.nrows(), n);
    eq_mat.view_mut((0, 0), (p.rows(), n)).copy_from(&coupling);
    eq_mat.view_mut((p.rows(), 0), (extra_eq.nrows(), n)).copy_from(&extra_eq);
    let mut eq_rhs = Vector::zeros(eq_mat.nrows());
    eq_rhs.rows_mut(0, p.rows()).copy_from(p.rhs());
    eq_rhs.rows_mut(p.rows(), extra_rhs.len()).copy_from(&extra_rhs);

    let (eq_mat, eq_rhs) = independent_rows(&eq_mat, &eq_rhs);
    let flat = if ineq_rows.is_empty() {
        EqQpFactor::new(&q_mat, &eq_mat, &eq_rhs)?.solve(&q)
    } else {
        let (ineq_mat, ineq_rhs) = dense(&ineq_rows);
        let qp = InequalityQp { q_mat, q, eq_mat, eq_rhs, ineq_mat, ineq_rhs };
        solve_ineq_qp(&qp, 1e-12, 500)?.x
    };
    let x = BlockVector::from_flat(&flat, &dims);
    let value = x
        .segments()
        .iter()
        .zip(p.blocks())
        .map(|(xi, b)| b.objective.value(xi))
        .sum();
    Ok((x, value))
}

/// Replaces `E x = d` by an equivalent system of full row rank (`U_rᵀE x = U_rᵀd` over the
/// numerically nonzero singular directions). Consistency is assumed.
fn independent_rows(e: &Matrix, d: &Vector) -> (Matrix, Vector) {
    if e.nrows() == 0 || numerical_rank(e) == e.nrows() {
        return (e.clone(), d.clone());
    }
    let svd = e.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * top).collect();
    let u_r = Matrix::from_fn(e.nrows(), keep.len(), |r, c| u[(r, keep[c])]);
    (u_r.transpose() * e, u_r.transpose() * d)
}

/// Names of the files written by [`bundled`].
pub const BUNDLED_NAMES: [&str; 9] = [
    "fixture_diverge3.json",
    "convex_n2.json",
    "convex_n3.json",
    "convex_n4.json",
    "convex_n6.json",
    "scopf_3bus.json",
    "scopf_6bus.json",
    "offload_b5a5.json",
    "offload_b5a10.json",
];

/// Seed of the bundled strongly convex suites and offloading instances.
pub const FIXTURE_SEED: u64 = 2015;

fn problem_json(p: &BlockProblem, start: Option<&BlockVector>) -> Result<String, ProblemError> {
    ProblemDocument::from_problem(p, start)?.to_json()
}

/// Every bundled fixture as `(file name, JSON text)`, in [`BUNDLED_NAMES`] order.
pub fn bundled() -> Vec<(&'static str, String)> {
    let problem = |p: BlockProblem, start: Option<BlockVector>| {
        problem_json(&p, start.as_ref()).expect("fixture serializes")
    };
    let offload_spec = |a: usize| OffloadSpec::standard_setup(5, a, FIXTURE_SEED);
    vec![
        (BUNDLED_NAMES[0], problem(diverge3(), Some(diverge3_start()))),
        (BUNDLED_NAMES[1], problem(strongly_convex(FIXTURE_SEED, 2), None)),
        (BUNDLED_NAMES[2], problem(strongly_convex(FIXTURE_SEED, 3), None)),
        (BUNDLED_NAMES[3], problem(strongly_convex(FIXTURE_SEED, 4), None)),
        (BUNDLED_NAMES[4], problem(strongly_convex(FIXTURE_SEED, 6), None)),
        (BUNDLED_NAMES[5], scopf::three_bus_case_json()),
        (BUNDLED_NAMES[6], scopf::synthetic_six_bus_case_json(FIXTURE_SEED)),
        (BUNDLED_NAMES[7], offload::spec_to_json(&offload_spec(5))),
        (BUNDLED_NAMES[8], offload::spec_to_json(&offload_spec(10))),
    ]
}
