use std::cmp::Ordering;

use super::ProxError;
use crate::Vector;

/// Componentwise clamp onto `[lower, upper]`.
pub fn project_box(x: &Vector, lower: &Vector, upper: &Vector) -> Result<Vector, ProxError> {
    if x.len() != lower.len() || x.len() != upper.len() {
        return Err(ProxError::DimensionMismatch(format!(
            "point has length {}, bounds have {} and {}",
            x.len(),
            lower.len(),
            upper.len()
        )));
    }
    for (index, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
        if !(l <= u) {
            return Err(ProxError::CrossedBounds { index, lower: *l, upper: *u });
        }
    }
    Ok(Vector::from_iterator(
        x.len(),
        x.iter().zip(lower.iter().zip(upper.iter())).map(|(v, (l, u))| v.max(*l).min(*u)),
    ))
}

/// Euclidean projection onto `{y : y ≥ 0, 1ᵀy ≤ cap}`.
///
/// Negative entries are clipped first; if the clipped point already fits under the cap it is
/// the answer, otherwise the threshold `τ > 0` with `Σ max(x − τ, 0) = cap` is found by a
/// descending sort (stable, so equal entries keep index order).
pub fn project_capped_simplexoid(x: &Vector, cap: f64) -> Result<Vector, ProxError> {
    if !(cap >= 0.0) {
        return Err(ProxError::NegativeCap(cap));
    }
    let clipped = x.map(|v| v.max(0.0));
    if clipped.sum() <= cap {
        return Ok(clipped);
    }
    let mut sorted: Vec<f64> = clipped.iter().copied().filter(|v| *v > 0.0).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - cap) / (k + 1) as f64;
        if k == 0 || u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    Ok(x.map(|v| (v - tau).max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_examples() {
        let lo = dvector![0.0];
        let hi = dvector![2.0];
        assert_eq!(project_box(&dvector![5.0], &lo, &hi).unwrap(), dvector![2.0]);
        assert_eq!(project_box(&dvector![1.5], &lo, &hi).unwrap(), dvector![1.5]);
        let lo = dvector![0.0, 0.0, 0.0];
        let hi = dvector![2.0, 2.0, 2.0];
        assert_eq!(project_box(&dvector![-1.0, 0.5, 3.0], &lo, &hi).unwrap(), dvector![0.0, 0.5, 2.0]);
    }

    #[test]
    fn crossed_box_is_an_error() {
        let err = project_box(&dvector![0.0], &dvector![1.0], &dvector![0.0]).unwrap_err();
        assert!(matches!(err, ProxError::CrossedBounds { index: 0, .. }));
    }

    /// Brute-force projection on a grid of resolution `h` over `[0, cap]²`.
    fn grid_projection(x: &Vector, cap: f64, h: f64) -> Vector {
        let steps = (cap / h).round() as usize;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let (a, b) = (i as f64 * h, j as f64 * h);
                let d = (a - x[0]).powi(2) + (b - x[1]).powi(2);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        dvector![best.1, best.2]
    }

    #[test]
    fn capped_examples_match_grid_oracle() {
        assert_eq!(project_capped_simplexoid(&dvector![1.0, 1.0], 10.0).unwrap(), dvector![1.0, 1.0]);

        let p = project_capped_simplexoid(&dvector![6.0, 6.0], 10.0).unwrap();
        assert_eq!(p, dvector![5.0, 5.0]);
        let g = grid_projection(&dvector![6.0, 6.0], 10.0, 1e-2);
        assert!((p - g).amax() <= 1e-2);

        let p = project_capped_simplexoid(&dvector![-1.0, 3.0], 2.0).unwrap();
        assert_eq!(p, dvector![0.0, 2.0]);
        let g = grid_projection(&dvector![-1.0, 3.0], 2.0, 1e-3);
        assert!((p - g).amax() <= 1e-3);
    }

    #[test]
    fn capped_projection_satisfies_both_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let n = rng.random_range(1..12);
            let x = Vector::from_fn(n, |_, _| rng.random_range(-5.0..8.0));
            let cap = rng.random_range(0.0..10.0);
            let p = project_capped_simplexoid(&x, cap).unwrap();
            assert!(p.iter().all(|v| *v >= 0.0));
            assert!(p.sum() <= cap + 1e-10, "sum {} cap {cap}", p.sum());
        }
    }

    #[test]
    fn zero_cap_projects_to_origin() {
        let p = project_capped_simplexoid(&dvector![3.0, 1.0, -2.0], 0.0).unwrap();
        assert_eq!(p, dvector![0.0, 0.0, 0.0]);
        assert!(matches!(project_capped_simplexoid(&dvector![1.0], -1.0), Err(ProxError::NegativeCap(_))));
    }

    #[test]
    fn equal_entries_are_treated_symmetrically() {
        let p = project_capped_simplexoid(&dvector![4.0, 4.0, 4.0, 1.0], 6.0).unwrap();
        assert_eq!(p, dvector![2.0, 2.0, 2.0, 0.0]);
    }
}
