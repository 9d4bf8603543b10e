use nalgebra::Cholesky;

use super::{project_box, project_capped_simplexoid, ProxError};
use crate::problem::FeasibleSet;
use crate::{Matrix, Vector};

/// `min ½ xᵀQx + qᵀx  s.t.  x ∈ set`.
#[derive(Debug, Clone)]
pub struct QpSpec {
    pub q_mat: Matrix,
    pub q: Vector,
    pub set: FeasibleSet,
}

impl QpSpec {
    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q.dot(x)
    }

    fn gradient(&self, x: &Vector) -> Vector {
        &self.q_mat * x + &self.q
    }

    fn project(&self, x: &Vector) -> Result<Vector, ProxError> {
        match &self.set {
            FeasibleSet::Free => Ok(x.clone()),
            FeasibleSet::Box { lower, upper } => project_box(x, lower, upper),
            FeasibleSet::NonNegCappedSum { cap } => project_capped_simplexoid(x, *cap),
            other => Err(ProxError::UnsupportedSet(format!("{other:?}"))),
        }
    }

    /// `‖x − Π(x − ∇)‖∞`, zero exactly at a minimizer.
    pub fn fixed_point_residual(&self, x: &Vector) -> Result<f64, ProxError> {
        let g = self.gradient(x);
        Ok((x - self.project(&(x - g))?).amax())
    }

    fn check_dims(&self) -> Result<usize, ProxError> {
        let n = self.q.len();
        if self.q_mat.nrows() != n || self.q_mat.ncols() != n {
            return Err(ProxError::DimensionMismatch(format!(
                "Hessian is {}x{}, linear term has {n}",
                self.q_mat.nrows(),
                self.q_mat.ncols()
            )));
        }
        Ok(n)
    }
}

/// Gershgorin bound on the largest eigenvalue.
fn gershgorin(m: &Matrix) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Box-constrained QP from the projection of the origin. See [`solve_box_qp_from`].
pub fn solve_box_qp(spec: &QpSpec, tol: f64, max_iter: usize) -> Result<Vector, ProxError> {
    let n = spec.check_dims()?;
    solve_box_qp_from(spec, &Vector::zeros(n), tol, max_iter)
}

/// Box-constrained QP by projected gradient with active-set Newton refinement.
///
/// Each iteration takes one projected-gradient step of length `1/L`, then fixes the variables
/// sitting on a bound with an outward gradient and attempts a Newton step on the rest,
/// accepting it (with projected backtracking) only when it does not increase the objective.
/// Stops when `‖x − Π(x − ∇f(x))‖∞ ≤ tol`.
pub fn solve_box_qp_from(spec: &QpSpec, start: &Vector, tol: f64, max_iter: usize) -> Result<Vector, ProxError> {
    let n = spec.check_dims()?;
    let (lower, upper) = match &spec.set {
        FeasibleSet::Box { lower, upper } => (lower, upper),
        other => return Err(ProxError::UnsupportedSet(format!("box QP needs a box, got {other:?}"))),
    };
    if lower.len() != n || upper.len() != n || start.len() != n {
        return Err(ProxError::DimensionMismatch("box QP bounds or start have the wrong length".into()));
    }
    let lip = gershgorin(&spec.q_mat);
    if lip == 0.0 {
        return linear_over_box(&spec.q, lower, upper);
    }
    let step = 1.0 / lip;
    let mut x = project_box(start, lower, upper)?;
    let mut best = (f64::INFINITY, x.clone());
    for _ in 0..max_iter {
        let g = spec.gradient(&x);
        let res = (&x - project_box(&(&x - &g), lower, upper)?).amax();
        if !res.is_finite() {
            return Err(ProxError::NonFiniteEncountered);
        }
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= tol {
            return Ok(x);
        }
        let x_pg = project_box(&(&x - &g * step), lower, upper)?;
        let f_pg = spec.objective(&x_pg);
        x = match newton_refine(spec, &x_pg, f_pg, lower, upper)? {
            Some(cand) => cand,
            None => x_pg,
        };
    }
    Err(ProxError::MaxIterExceeded { best: best.1, residual: best.0, iterations: max_iter })
}

fn newton_refine(
    spec: &QpSpec,
    x: &Vector,
    fx: f64,
    lower: &Vector,
    upper: &Vector,
) -> Result<Option<Vector>, ProxError> {
    let g = spec.gradient(x);
    let free: Vec<usize> = (0..x.len())
        .filter(|&i| !((x[i] <= lower[i] && g[i] >= 0.0) || (x[i] >= upper[i] && g[i] <= 0.0)))
        .collect();
    if free.is_empty() {
        return Ok(None);
    }
    let k = free.len();
    let reduced = Matrix::from_fn(k, k, |a, b| spec.q_mat[(free[a], free[b])]);
    let Some(chol) = Cholesky::new(reduced) else { return Ok(None) };
    let rhs = Vector::from_fn(k, |a, _| -g[free[a]]);
    let d_free = chol.solve(&rhs);
    let mut d = Vector::zeros(x.len());
    for (a, &i) in free.iter().enumerate() {
        d[i] = d_free[a];
    }
    let mut t = 1.0;
    for _ in 0..8 {
        let cand = project_box(&(x + &d * t), lower, upper)?;
        if spec.objective(&cand) <= fx {
            return Ok(Some(cand));
        }
        t *= 0.5;
    }
    Ok(None)
}

fn linear_over_box(q: &Vector, lower: &Vector, upper: &Vector) -> Result<Vector, ProxError> {
    let mut x = project_box(&Vector::zeros(q.len()), lower, upper)?;
    for i in 0..q.len() {
        let target = if q[i] > 0.0 {
            lower[i]
        } else if q[i] < 0.0 {
            upper[i]
        } else {
            continue;
        };
        if !target.is_finite() {
            return Err(ProxError::Unbounded(format!("linear cost pushes entry {i} to infinity")));
        }
        x[i] = target;
    }
    Ok(x)
}

/// Accelerated projected gradient for QPs over any projectable set (free, box, capped sum).
///
/// Box sets are delegated to [`solve_box_qp_from`]. Uses step `1/L` with a function-value
/// restart and stops on the same fixed-point residual test.
pub fn solve_projected_qp(spec: &QpSpec, start: &Vector, tol: f64, max_iter: usize) -> Result<Vector, ProxError> {
    let n = spec.check_dims()?;
    if start.len() != n {
        return Err(ProxError::DimensionMismatch("start has the wrong length".into()));
    }
    if matches!(spec.set, FeasibleSet::Box { .. }) {
        return solve_box_qp_from(spec, start, tol, max_iter);
    }
    let lip = gershgorin(&spec.q_mat);
    if lip == 0.0 {
        return Err(ProxError::Unbounded("projected QP without curvature".into()));
    }
    let step = 1.0 / lip;
    let mut x = spec.project(start)?;
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut fx = spec.objective(&x);
    let mut best = (f64::INFINITY, x.clone());
    for _ in 0..max_iter {
        let res = spec.fixed_point_residual(&x)?;
        if !res.is_finite() {
            return Err(ProxError::NonFiniteEncountered);
        }
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= tol {
            return Ok(x);
        }
        let x_next = spec.project(&(&y - spec.gradient(&y) * step))?;
        let f_next = spec.objective(&x_next);
        if f_next > fx {
            // restart momentum
            y = x.clone();
            t = 1.0;
            let x_plain = spec.project(&(&x - spec.gradient(&x) * step))?;
            fx = spec.objective(&x_plain);
            x = x_plain;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
        x = x_next;
        fx = f_next;
        t = t_next;
    }
    Err(ProxError::MaxIterExceeded { best: best.1, residual: best.0, iterations: max_iter })
}

/// Factorisation of `min ½ xᵀQx + gᵀx s.t. Ex = d` for repeated solves with varying `g`.
///
/// Null-space method: `x = x_p + Z w` with `x_p = Eᵀ(EEᵀ)⁻¹d`, `Z` an orthonormal basis of
/// `null(E)` and `w` solving the reduced system `(ZᵀQZ) w = −Zᵀ(g + Q x_p)`.
#[derive(Debug, Clone)]
pub struct EqQpFactor {
    q_mat: Matrix,
    /// `None` when there are no equality rows (`Z = I`).
    basis: Option<Matrix>,
    particular: Vector,
    reduced: Cholesky<f64, nalgebra::Dyn>,
}

impl EqQpFactor {
    pub fn new(q_mat: &Matrix, e: &Matrix, d: &Vector) -> Result<Self, ProxError> {
        let n = q_mat.nrows();
        if q_mat.ncols() != n || e.ncols() != n || e.nrows() != d.len() {
            return Err(ProxError::DimensionMismatch(format!(
                "Q is {}x{}, E is {}x{}, d has {}",
                q_mat.nrows(),
                q_mat.ncols(),
                e.nrows(),
                e.ncols(),
                d.len()
            )));
        }
        let p = e.nrows();
        let (basis, particular) = if p == 0 {
            (None, Vector::zeros(n))
        } else {
            if p > n {
                return Err(ProxError::SingularKkt(format!("{p} equality rows for {n} variables")));
            }
            let gram = e.transpose() * e;
            let eig = gram.symmetric_eigen();
            let top = eig.eigenvalues.amax();
            let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-10 * top).collect();
            if top == 0.0 || n - keep.len() != p {
                return Err(ProxError::SingularKkt("equality matrix is not of full row rank".into()));
            }
            let z = Matrix::from_fn(n, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
            let ee = e * e.transpose();
            let chol = Cholesky::new(ee)
                .ok_or_else(|| ProxError::SingularKkt("EEᵀ is not positive definite".into()))?;
            let xp = e.transpose() * chol.solve(d);
            (Some(z), xp)
        };
        let reduced = match &basis {
            Some(z) => z.transpose() * q_mat * z,
            None => q_mat.clone(),
        };
        if reduced.nrows() > 0 {
            let eig = reduced.clone().symmetric_eigenvalues();
            let scale = q_mat.amax().max(f64::MIN_POSITIVE);
            if eig.min() <= 1e-12 * scale {
                return Err(ProxError::SingularKkt("Hessian is singular on the null space of E".into()));
            }
        }
        let reduced = Cholesky::new(reduced)
            .ok_or_else(|| ProxError::SingularKkt("reduced Hessian is not positive definite".into()))?;
        Ok(Self { q_mat: q_mat.clone(), basis, particular, reduced })
    }

    /// Minimizer for linear term `g`.
    pub fn solve(&self, g: &Vector) -> Vector {
        match &self.basis {
            None => -self.reduced.solve(g),
            Some(z) => {
                let rhs = z.transpose() * (g + &self.q_mat * &self.particular);
                let w = self.reduced.solve(&rhs);
                &self.particular - z * w
            }
        }
    }
}

/// `min ½ xᵀQx + qᵀx  s.t.  Ex = d` via the KKT conditions.
pub fn solve_eq_qp(q_mat: &Matrix, q: &Vector, e: &Matrix, d: &Vector) -> Result<Vector, ProxError> {
    if q.len() != q_mat.nrows() {
        return Err(ProxError::DimensionMismatch("linear term length differs from Q".into()));
    }
    let factor = EqQpFactor::new(q_mat, e, d)?;
    let x = factor.solve(q);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(ProxError::NonFiniteEncountered);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxed(q_mat: Matrix, q: Vector, lo: f64, hi: f64) -> QpSpec {
        let n = q.len();
        QpSpec { q_mat, q, set: FeasibleSet::Box { lower: Vector::repeat(n, lo), upper: Vector::repeat(n, hi) } }
    }

    #[test]
    fn box_qp_examples() {
        let x = solve_box_qp(&boxed(dmatrix![1.0], dvector![-3.0], 0.0, 2.0), 1e-10, 1000).unwrap();
        assert_eq!(x, dvector![2.0]);
        let x = solve_box_qp(&boxed(Matrix::identity(2, 2), dvector![-1.0, -1.0], 0.0, 10.0), 1e-10, 1000).unwrap();
        assert!((x - dvector![1.0, 1.0]).amax() < 1e-12);
    }

    /// Enumerates every (lower, free, upper) pattern and keeps the best KKT-feasible candidate.
    fn active_set_oracle(spec: &QpSpec, lo: f64, hi: f64) -> Vector {
        let n = spec.q.len();
        let mut best: Option<(f64, Vector)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut pattern = vec![0u8; n];
            let mut c = code;
            for p in pattern.iter_mut() {
                *p = (c % 3) as u8;
                c /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 1).collect();
            let mut x = Vector::zeros(n);
            for i in 0..n {
                x[i] = match pattern[i] {
                    0 => lo,
                    2 => hi,
                    _ => 0.0,
                };
            }
            if !free.is_empty() {
                let k = free.len();
                let qff = Matrix::from_fn(k, k, |a, b| spec.q_mat[(free[a], free[b])]);
                let mut rhs = Vector::from_fn(k, |a, _| -spec.q[free[a]]);
                for a in 0..k {
                    for j in 0..n {
                        if pattern[j] != 1 {
                            rhs[a] -= spec.q_mat[(free[a], j)] * x[j];
                        }
                    }
                }
                let Some(sol) = qff.lu().solve(&rhs) else { continue };
                for (a, &i) in free.iter().enumerate() {
                    x[i] = sol[a];
                }
            }
            if x.iter().any(|v| *v < lo - 1e-12 || *v > hi + 1e-12) {
                continue;
            }
            let f = spec.objective(&x);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, x));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn box_qp_matches_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let b = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let q_mat = &b * b.transpose() + Matrix::identity(4, 4) * 0.1;
            let q = Vector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let spec = boxed(q_mat, q, -1.0, 1.0);
            let x = solve_box_qp(&spec, 1e-10, 10_000).unwrap();
            let oracle = active_set_oracle(&spec, -1.0, 1.0);
            assert!((&x - &oracle).amax() <= 1e-6, "{x} vs {oracle}");
        }
    }

    #[test]
    fn box_qp_beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let q_mat = &b * b.transpose(); // rank 3: PSD but singular
        let q = Vector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
        let spec = boxed(q_mat, q, 0.0, 1.0);
        let x = solve_box_qp(&spec, 1e-8, 100_000).unwrap();
        let fx = spec.objective(&x);
        for _ in 0..1000 {
            let y = Vector::from_fn(5, |_, _| rng.random_range(0.0..1.0));
            assert!(fx <= spec.objective(&y) + 1e-12);
        }
    }

    #[test]
    fn box_qp_reports_best_iterate_on_iteration_cap() {
        let spec = boxed(dmatrix![1.0, 0.99; 0.99, 1.0], dvector![-5.0, 1.0], -10.0, 10.0);
        match solve_box_qp(&spec, 0.0, 1) {
            Err(ProxError::MaxIterExceeded { best, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(best.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eq_qp_examples() {
        let x = solve_eq_qp(&Matrix::identity(2, 2), &Vector::zeros(2), &dmatrix![1.0, 1.0], &dvector![2.0]).unwrap();
        assert!((x - dvector![1.0, 1.0]).amax() < 1e-12);
        let x = solve_eq_qp(&dmatrix![1.0, 0.0; 0.0, 4.0], &Vector::zeros(2), &dmatrix![1.0, 1.0], &dvector![5.0])
            .unwrap();
        assert!((&x - dvector![4.0, 1.0]).amax() < 1e-12);
        // brute-force line search along x1 + x2 = 5
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=50_000 {
            let t = k as f64 * 1e-4;
            let f = 0.5 * (t * t + 4.0 * (5.0 - t) * (5.0 - t));
            if f < best.0 {
                best = (f, t);
            }
        }
        assert!((x[0] - best.1).abs() <= 1e-4);
    }

    #[test]
    fn rank_deficient_equalities_are_singular() {
        let e = dmatrix![1.0, 1.0; 2.0, 2.0];
        let err = solve_eq_qp(&Matrix::identity(2, 2), &Vector::zeros(2), &e, &dvector![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, ProxError::SingularKkt(_)));
    }

    #[test]
    fn eq_qp_singular_on_null_space_is_rejected() {
        let err = solve_eq_qp(&dmatrix![1.0, 0.0; 0.0, 0.0], &Vector::zeros(2), &dmatrix![1.0, 0.0], &dvector![1.0])
            .unwrap_err();
        assert!(matches!(err, ProxError::SingularKkt(_)));
    }

    #[test]
    fn projected_qp_on_capped_set() {
        let spec = QpSpec {
            q_mat: dmatrix![2.0, 0.5; 0.5, 1.0],
            q: dvector![-10.0, -10.0],
            set: FeasibleSet::NonNegCappedSum { cap: 3.0 },
        };
        let x = solve_projected_qp(&spec, &Vector::zeros(2), 1e-10, 100_000).unwrap();
        assert!((x.sum() - 3.0).abs() < 1e-9);
        // on the face x1 + x2 = 3 the optimum solves the 1-D stationarity condition
        let face = solve_eq_qp(&spec.q_mat, &spec.q, &dmatrix![1.0, 1.0], &dvector![3.0]).unwrap();
        assert!((x - face).amax() < 1e-8);
    }
}
