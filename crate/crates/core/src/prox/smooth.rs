use nalgebra::Cholesky;

use super::ProxError;
use crate::problem::SmoothFunction;
use crate::{Matrix, Vector};

/// Largest dimension handled by the Newton path.
const NEWTON_MAX_DIM: usize = 64;

type ValueFn = Box<dyn Fn(&Vector) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&Vector) -> Vector + Send + Sync>;
type HessFn = Box<dyn Fn(&Vector) -> Matrix + Send + Sync>;

/// A [`SmoothFunction`] assembled from closures.
pub struct FnSmooth {
    pub dim: usize,
    pub value: ValueFn,
    pub gradient: GradFn,
    pub hessian: Option<HessFn>,
}

impl FnSmooth {
    pub fn new(
        dim: usize,
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self { dim, value: Box::new(value), gradient: Box::new(gradient), hessian: None }
    }

    pub fn with_hessian(mut self, hessian: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.hessian = Some(Box::new(hessian));
        self
    }
}

impl SmoothFunction for FnSmooth {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (self.gradient)(x)
    }
    fn hessian(&self, x: &Vector) -> Option<Matrix> {
        self.hessian.as_ref().map(|h| h(x))
    }
}

/// Unconstrained smooth minimization problem.
pub struct SmoothSpec<'a> {
    pub func: &'a dyn SmoothFunction,
    /// Strong-convexity modulus.
    pub mu: f64,
    /// Gradient Lipschitz bound (used for the first-order step `1/L`).
    pub lipschitz: f64,
    pub start: Vector,
}

impl SmoothSpec<'_> {
    fn validate(&self) -> Result<(), ProxError> {
        if self.start.len() != self.func.dim() {
            return Err(ProxError::DimensionMismatch(format!(
                "start has length {}, function dimension is {}",
                self.start.len(),
                self.func.dim()
            )));
        }
        if !(self.lipschitz > 0.0) || !(self.mu >= 0.0) || self.lipschitz < self.mu {
            return Err(ProxError::InvalidSpec(format!(
                "need 0 ≤ mu ≤ L and L > 0, got mu = {}, L = {}",
                self.mu, self.lipschitz
            )));
        }
        Ok(())
    }
}

/// Minimizes a strongly convex smooth function until `‖∇f‖₂ ≤ tol`.
///
/// Damped Newton with Armijo backtracking when a Hessian is available and `n ≤ 64`,
/// otherwise gradient descent from step `1/L` with the same backtracking safeguard.
/// Both paths are deterministic.
pub fn minimize_smooth(spec: &SmoothSpec<'_>, tol: f64, max_iter: usize) -> Result<Vector, ProxError> {
    spec.validate()?;
    if !(spec.mu > 0.0) {
        return Err(ProxError::InvalidSpec("minimize_smooth needs a strongly convex function (mu > 0)".into()));
    }
    let f = spec.func;
    let mut x = spec.start.clone();
    let mut fx = f.value(&x);
    if !fx.is_finite() {
        return Err(ProxError::NonFiniteEncountered);
    }
    let use_newton = x.len() <= NEWTON_MAX_DIM && f.hessian(&x).is_some();
    let mut best = (f64::INFINITY, x.clone());
    for _ in 0..max_iter {
        let g = f.gradient(&x);
        let gnorm = g.norm();
        if !gnorm.is_finite() {
            return Err(ProxError::NonFiniteEncountered);
        }
        if gnorm < best.0 {
            best = (gnorm, x.clone());
        }
        if gnorm <= tol {
            return Ok(x);
        }
        let direction = if use_newton {
            f.hessian(&x).and_then(Cholesky::new).map(|c| -c.solve(&g)).unwrap_or_else(|| -&g / spec.lipschitz)
        } else {
            -&g / spec.lipschitz
        };
        let slope = g.dot(&direction);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &direction * t;
            let fc = f.value(&cand);
            // the slack term keeps full steps acceptable once decreases fall below rounding
            if fc.is_finite() && fc <= fx + 1e-4 * t * slope + 4.0 * f64::EPSILON * fx.abs() {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                x = cand;
                fx = fc;
            }
            None => {
                // Armijo can fail from rounding alone near the optimum; take the full step if it
                // still shrinks the gradient.
                let cand = &x + &direction;
                let fc = f.value(&cand);
                if fc.is_finite() && f.gradient(&cand).norm() < gnorm {
                    x = cand;
                    fx = fc;
                } else {
                    break;
                }
            }
        }
    }
    Err(ProxError::MaxIterExceeded { best: best.1, residual: best.0, iterations: max_iter })
}

/// Projected gradient with backtracking for a smooth function over a projectable set.
///
/// Stops when `‖x − Π(x − ∇f(x))‖∞ ≤ tol`.
pub fn minimize_smooth_projected(
    spec: &SmoothSpec<'_>,
    project: &dyn Fn(&Vector) -> Result<Vector, ProxError>,
    tol: f64,
    max_iter: usize,
) -> Result<Vector, ProxError> {
    spec.validate()?;
    let f = spec.func;
    let mut x = project(&spec.start)?;
    let mut fx = f.value(&x);
    if !fx.is_finite() {
        return Err(ProxError::NonFiniteEncountered);
    }
    let mut step = 1.0 / spec.lipschitz;
    let mut best = (f64::INFINITY, x.clone());
    for _ in 0..max_iter {
        let g = f.gradient(&x);
        let res = (&x - project(&(&x - &g))?).amax();
        if !res.is_finite() {
            return Err(ProxError::NonFiniteEncountered);
        }
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= tol {
            return Ok(x);
        }
        let mut moved = false;
        for _ in 0..60 {
            let cand = project(&(&x - &g * step))?;
            let fc = f.value(&cand);
            let d = &cand - &x;
            // sufficient decrease for the projected step
            if fc.is_finite() && fc <= fx + g.dot(&d) + d.norm_squared() / (2.0 * step) + 4.0 * f64::EPSILON * fx.abs() {
                x = cand;
                fx = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Err(ProxError::MaxIterExceeded { best: best.1, residual: best.0, iterations: max_iter })
}

/// Central finite-difference check of a gradient oracle at `x`.
///
/// Returns `‖g_fd − g‖∞ / max(1, ‖g‖∞)` with per-coordinate step `1e-6 · max(1, |x_i|)`.
pub fn fd_gradient_error(func: &dyn SmoothFunction, x: &Vector) -> f64 {
    let g = func.gradient(x);
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (func.value(&xp) - func.value(&xm)) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs());
    }
    worst / g.amax().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shifted_norm(a: Vector) -> FnSmooth {
        let (a1, a2) = (a.clone(), a);
        FnSmooth::new(2, move |x| 0.5 * (x - &a1).norm_squared(), move |x| x - &a2)
            .with_hessian(|_| Matrix::identity(2, 2))
    }

    #[test]
    fn prox_of_zero_returns_center() {
        let f = shifted_norm(dvector![1.0, 2.0]);
        let spec = SmoothSpec { func: &f, mu: 1.0, lipschitz: 1.0, start: Vector::zeros(2) };
        let x = minimize_smooth(&spec, 1e-10, 100).unwrap();
        assert!((x - dvector![1.0, 2.0]).amax() < 1e-12);
    }

    fn log_plus_quad() -> FnSmooth {
        FnSmooth::new(
            1,
            |x| -(x[0] + 1.0).ln() + 0.5 * (x[0] - 1.0).powi(2),
            |x| dvector![-1.0 / (x[0] + 1.0) + x[0] - 1.0],
        )
    }

    #[test]
    fn log_quadratic_root_is_sqrt_two() {
        // (x − 1)(x + 1) = 1  ⇒  x = √2
        let f = log_plus_quad();
        let spec = SmoothSpec { func: &f, mu: 1.0, lipschitz: 2.0, start: Vector::zeros(1) };
        let x = minimize_smooth(&spec, 1e-12, 10_000).unwrap();
        assert!((x[0] - 2.0_f64.sqrt()).abs() < 1e-10);
        assert!(f.gradient(&x).norm() <= 1e-12);

        let f = log_plus_quad().with_hessian(|x| Matrix::from_element(1, 1, 1.0 / (x[0] + 1.0).powi(2) + 1.0));
        let spec = SmoothSpec { func: &f, mu: 1.0, lipschitz: 2.0, start: Vector::zeros(1) };
        let x = minimize_smooth(&spec, 1e-12, 100).unwrap();
        assert!((x[0] - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quadratics_reproduce_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [1, 3, 8, 70] {
            let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q_mat = &b * b.transpose() + Matrix::identity(n, n);
            let q = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let exact = -q_mat.clone().cholesky().unwrap().solve(&q);
            let (qa, qb, qc, q1, q2) = (q_mat.clone(), q_mat.clone(), q_mat.clone(), q.clone(), q.clone());
            let f = FnSmooth::new(n, move |x| 0.5 * x.dot(&(&qa * x)) + q1.dot(x), move |x| &qb * x + &q2)
                .with_hessian(move |_| qc.clone());
            let eig = q_mat.symmetric_eigenvalues();
            let spec = SmoothSpec { func: &f, mu: eig.min(), lipschitz: eig.max(), start: Vector::zeros(n) };
            let x = minimize_smooth(&spec, 1e-12, 200_000).unwrap();
            assert!((&x - &exact).norm() <= 1e-8 * exact.norm().max(1.0), "n = {n}");
        }
    }

    #[test]
    fn validator_catches_an_inconsistent_gradient() {
        let good = log_plus_quad();
        let bad = FnSmooth::new(1, |x| x[0] * x[0], |x| dvector![3.0 * x[0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = dvector![rng.random_range(0.0..5.0)];
            assert!(fd_gradient_error(&good, &x) <= 1e-5);
        }
        assert!(fd_gradient_error(&bad, &dvector![2.0]) > 1e-1);
    }

    #[test]
    fn leaving_the_domain_is_non_finite() {
        let f = log_plus_quad();
        let spec = SmoothSpec { func: &f, mu: 1.0, lipschitz: 2.0, start: dvector![-2.0] };
        assert!(matches!(minimize_smooth(&spec, 1e-8, 10), Err(ProxError::NonFiniteEncountered)));
    }

    #[test]
    fn projected_variant_respects_the_box() {
        let f = shifted_norm(dvector![3.0, -1.0]);
        let spec = SmoothSpec { func: &f, mu: 1.0, lipschitz: 1.0, start: Vector::zeros(2) };
        let lo = dvector![0.0, 0.0];
        let hi = dvector![2.0, 2.0];
        let x = minimize_smooth_projected(&spec, &|v| crate::prox::project_box(v, &lo, &hi), 1e-12, 1000).unwrap();
        assert_eq!(x, dvector![2.0, 0.0]);
    }
}
