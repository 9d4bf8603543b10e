//! Dense primal-dual interior-point method for small convex QPs with general linear
//! constraints. Used by the power-flow subproblems and the centralized oracle, where the flow
//! limits are arbitrary two-sided linear inequalities.

use super::ProxError;
use crate::{Matrix, Vector};

/// `min ½ xᵀQx + qᵀx  s.t.  A x = b,  G x ≤ h`.
#[derive(Debug, Clone)]
pub struct InequalityQp {
    pub q_mat: Matrix,
    pub q: Vector,
    pub eq_mat: Matrix,
    pub eq_rhs: Vector,
    pub ineq_mat: Matrix,
    pub ineq_rhs: Vector,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vector,
    /// Multipliers of the equality rows.
    pub eq_dual: Vector,
    /// Multipliers of the inequality rows (≥ 0).
    pub ineq_dual: Vector,
    pub objective: f64,
    pub iterations: usize,
}

impl InequalityQp {
    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q.dot(x)
    }

    fn check(&self) -> Result<usize, ProxError> {
        let n = self.q.len();
        let ok = self.q_mat.nrows() == n
            && self.q_mat.ncols() == n
            && self.eq_mat.ncols() == n
            && self.eq_mat.nrows() == self.eq_rhs.len()
            && self.ineq_mat.ncols() == n
            && self.ineq_mat.nrows() == self.ineq_rhs.len();
        if !ok {
            return Err(ProxError::DimensionMismatch("inconsistent inequality-QP dimensions".into()));
        }
        Ok(n)
    }
}

fn max_step(v: &Vector, dv: &Vector) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(1.0, f64::min)
}

/// Mehrotra predictor-corrector on the reduced KKT system
/// `[Q + GᵀWG, Aᵀ; A, 0]`, `W = diag(z/s)`.
///
/// Converges when primal, dual and complementarity residuals are all below `tol`
/// (scaled by the data magnitude). Problems whose primal residual stalls are reported as
/// [`ProxError::Infeasible`].
pub fn solve_ineq_qp(qp: &InequalityQp, tol: f64, max_iter: usize) -> Result<QpSolution, ProxError> {
    let n = qp.check()?;
    let p = qp.eq_rhs.len();
    let r = qp.ineq_rhs.len();
    let (a, g) = (&qp.eq_mat, &qp.ineq_mat);

    let mut x = Vector::zeros(n);
    let mut y = Vector::zeros(p);
    let mut s = (&qp.ineq_rhs - g * &x).map(|v| v.max(1.0));
    let mut z = Vector::repeat(r, 1.0);

    let scale_p = 1.0 + qp.eq_rhs.amax();
    let scale_i = 1.0 + qp.ineq_rhs.amax();
    let scale_d = 1.0 + qp.q.amax() + qp.q_mat.amax();

    let mut last = (f64::INFINITY, f64::INFINITY);
    for it in 0..max_iter {
        let rd = &qp.q_mat * &x + &qp.q + a.transpose() * &y + g.transpose() * &z;
        let rp = a * &x - &qp.eq_rhs;
        let ri = g * &x + &s - &qp.ineq_rhs;
        let mu = if r > 0 { s.dot(&z) / r as f64 } else { 0.0 };
        let obj = qp.objective(&x);
        if ![rd.amax(), rp.amax(), ri.amax(), mu].iter().all(|v| v.is_finite()) {
            return Err(ProxError::NonFiniteEncountered);
        }
        let primal = (rp.amax() / scale_p).max(ri.amax() / scale_i);
        last = (primal, rd.amax() / scale_d);
        if primal <= tol && rd.amax() <= tol * scale_d && mu <= tol * (1.0 + obj.abs()) {
            return Ok(QpSolution { objective: obj, x, eq_dual: y, ineq_dual: z, iterations: it });
        }
        if z.amax() > 1e14 {
            return Err(ProxError::Infeasible(format!("inequality multipliers diverge (primal residual {primal:.3e})")));
        }

        let w = z.component_div(&s);
        let mut kkt = Matrix::zeros(n + p, n + p);
        let gw = Matrix::from_fn(r, n, |i, j| g[(i, j)] * w[i]);
        let top = &qp.q_mat + g.transpose() * gw;
        kkt.view_mut((0, 0), (n, n)).copy_from(&top);
        kkt.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (p, n)).copy_from(a);
        let lu = kkt.clone().full_piv_lu();

        let solve = |rc: &Vector| -> Option<(Vector, Vector, Vector, Vector)> {
            // dz = S⁻¹(−rc + Z ri + Z G dx), ds = −ri − G dx
            let tmp = (rc - z.component_mul(&ri)).component_div(&s);
            let rhs_x = -&rd + g.transpose() * &tmp;
            let mut rhs = Vector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&rhs_x);
            rhs.rows_mut(n, p).copy_from(&(-&rp));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, p).into_owned();
            let gdx = g * &dx;
            let ds = -&ri - &gdx;
            let dz = (-rc + z.component_mul(&ri) + z.component_mul(&gdx)).component_div(&s);
            Some((dx, dy, ds, dz))
        };

        let rc_aff = s.component_mul(&z);
        let Some((_, _, ds_a, dz_a)) = solve(&rc_aff) else {
            return Err(ProxError::SingularKkt("interior-point Newton system is singular".into()));
        };
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if r > 0 {
            (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)) / r as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - Vector::repeat(r, sigma * mu);
        let Some((dx, dy, ds, dz)) = solve(&rc) else {
            return Err(ProxError::SingularKkt("interior-point Newton system is singular".into()));
        };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
    }
    if last.0 > tol.sqrt() {
        Err(ProxError::Infeasible(format!("primal residual stalled at {:.3e}", last.0)))
    } else {
        Err(ProxError::MaxIterExceeded { best: x, residual: last.0.max(last.1), iterations: max_iter })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::{solve_box_qp, solve_eq_qp, QpSpec};
    use crate::problem::FeasibleSet;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equality_only_matches_kkt_solve() {
        let q_mat = dmatrix![1.0, 0.0; 0.0, 4.0];
        let qp = InequalityQp {
            q_mat: q_mat.clone(),
            q: Vector::zeros(2),
            eq_mat: dmatrix![1.0, 1.0],
            eq_rhs: dvector![5.0],
            ineq_mat: Matrix::zeros(0, 2),
            ineq_rhs: Vector::zeros(0),
        };
        let sol = solve_ineq_qp(&qp, 1e-10, 100).unwrap();
        let kkt = solve_eq_qp(&q_mat, &Vector::zeros(2), &dmatrix![1.0, 1.0], &dvector![5.0]).unwrap();
        assert!((sol.x - kkt).amax() < 1e-8);
    }

    #[test]
    fn box_rows_match_box_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let b = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let q_mat = &b * b.transpose() + Matrix::identity(4, 4) * 0.05;
            let q = Vector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let mut g = Matrix::zeros(8, 4);
            let mut h = Vector::zeros(8);
            for i in 0..4 {
                g[(i, i)] = 1.0;
                h[i] = 1.0;
                g[(4 + i, i)] = -1.0;
                h[4 + i] = 1.0;
            }
            let qp = InequalityQp {
                q_mat: q_mat.clone(),
                q: q.clone(),
                eq_mat: Matrix::zeros(0, 4),
                eq_rhs: Vector::zeros(0),
                ineq_mat: g,
                ineq_rhs: h,
            };
            let sol = solve_ineq_qp(&qp, 1e-11, 200).unwrap();
            let spec = QpSpec {
                q_mat,
                q,
                set: FeasibleSet::Box { lower: Vector::repeat(4, -1.0), upper: Vector::repeat(4, 1.0) },
            };
            let x = solve_box_qp(&spec, 1e-12, 10_000).unwrap();
            assert!((sol.x - x).amax() < 1e-7);
        }
    }

    #[test]
    fn psd_objective_with_coupled_rows() {
        // min ½(u − v − 3)²  s.t. 0 ≤ u ≤ 1, 0 ≤ v ≤ 1  → optimum value ½(1 − 0 − 3)² = 2
        let qp = InequalityQp {
            q_mat: dmatrix![1.0, -1.0; -1.0, 1.0],
            q: dvector![-3.0, 3.0],
            eq_mat: Matrix::zeros(0, 2),
            eq_rhs: Vector::zeros(0),
            ineq_mat: dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0],
            ineq_rhs: dvector![1.0, 0.0, 1.0, 0.0],
        };
        let sol = solve_ineq_qp(&qp, 1e-11, 200).unwrap();
        assert!((sol.objective + 4.5 - 2.0).abs() < 1e-8, "{}", sol.objective);
        assert!((sol.x - dvector![1.0, 0.0]).amax() < 1e-6);
    }

    #[test]
    fn infeasible_rows_are_reported() {
        let qp = InequalityQp {
            q_mat: Matrix::identity(1, 1),
            q: dvector![0.0],
            eq_mat: dmatrix![1.0],
            eq_rhs: dvector![5.0],
            ineq_mat: dmatrix![1.0],
            ineq_rhs: dvector![1.0],
        };
        assert!(matches!(solve_ineq_qp(&qp, 1e-10, 200), Err(ProxError::Infeasible(_))));
    }
}
