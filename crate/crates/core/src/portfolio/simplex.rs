use nalgebra::{DMatrix, DVector};

use super::PortfolioError;

pub const MAX_ITERATIONS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-10;

/// Euclidean projection onto `{w : Σw = 1, w ≥ 0}` (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Rejects non-finite, non-square, asymmetric or indefinite matrices.
pub fn check_covariance(sigma: &DMatrix<f64>) -> Result<(), PortfolioError> {
    let (r, c) = sigma.shape();
    if r != c {
        return Err(PortfolioError::BadCovariance(format!(
            "{r}x{c} is not square"
        )));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(PortfolioError::BadCovariance("non-finite entry".into()));
    }
    let scale = sigma.amax().max(1.0);
    for i in 0..r {
        for j in i + 1..r {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                return Err(PortfolioError::BadCovariance(format!(
                    "entries ({i},{j}) and ({j},{i}) differ"
                )));
            }
        }
    }
    if r > 0 {
        let min_eig = sigma.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 * scale {
            return Err(PortfolioError::BadCovariance(format!(
                "negative eigenvalue {min_eig}"
            )));
        }
    }
    Ok(())
}

/// `w'μ − (λ/2) w'Σw`.
pub fn mean_variance_objective(w: &[f64], mu: &[f64], sigma: &DMatrix<f64>, lambda: f64) -> f64 {
    let w = DVector::from_row_slice(w);
    let ret: f64 = w.iter().zip(mu).map(|(a, b)| a * b).sum();
    ret - 0.5 * lambda * (w.transpose() * sigma * &w)[(0, 0)]
}

/// Maximizes the mean-variance objective on the simplex by projected
/// gradient ascent with step `1/L`, `L = λ·λ_max(Σ)`, from equal weights.
pub fn solve_simplex_qp(
    mu: &[f64],
    sigma: &DMatrix<f64>,
    lambda: f64,
) -> Result<Vec<f64>, PortfolioError> {
    let n = mu.len();
    if n == 0 {
        return Err(PortfolioError::EmptyUniverse);
    }
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(PortfolioError::DimensionMismatch(format!(
            "{n} means vs {}x{} covariance",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) || mu.iter().any(|v| !v.is_finite()) {
        return Err(PortfolioError::BadCovariance("non-finite inputs".into()));
    }
    check_covariance(sigma)?;
    let l = lambda * sigma.clone().symmetric_eigenvalues().max().max(0.0);
    let step = 1.0 / l.max(1e-12);
    let mu_v = DVector::from_row_slice(mu);
    let mut w = vec![1.0 / n as f64; n];
    let mut obj = mean_variance_objective(&w, mu, sigma, lambda);
    for _ in 0..MAX_ITERATIONS {
        let wv = DVector::from_row_slice(&w);
        let grad = &mu_v - sigma * &wv * lambda;
        let moved: Vec<f64> = w
            .iter()
            .zip(grad.iter())
            .map(|(a, g)| a + step * g)
            .collect();
        let next = project_simplex(&moved);
        let next_obj = mean_variance_objective(&next, mu, sigma, lambda);
        let done = (next_obj - obj).abs() < TOLERANCE;
        w = next;
        obj = next_obj;
        if done {
            break;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_fixed_points() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[5.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            check_covariance(&s),
            Err(PortfolioError::BadCovariance(_))
        ));
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            check_covariance(&s),
            Err(PortfolioError::BadCovariance(_))
        ));
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_nearest(v in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let p = project_simplex(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            // no vertex is closer than the projection
            let d = |w: &[f64]| w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            for k in 0..v.len() {
                let mut e = vec![0.0; v.len()];
                e[k] = 1.0;
                prop_assert!(d(&p) <= d(&e) + 1e-12);
            }
        }
    }
}
