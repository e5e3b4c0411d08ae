use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

/// OLS fit with heteroskedasticity-consistent (HC1) standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    /// Two-sided p-values from Student's t with `n − k` degrees of freedom.
    pub p: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Plain coefficient of determination `1 − SSR/SST`.
    pub r2: f64,
    pub n: usize,
    pub k: usize,
}

/// Least squares of `y` on the columns of `x` with HC1 covariance
/// `n/(n−k) · (X'X)⁻¹ X' diag(e²) X (X'X)⁻¹`.
pub fn ols_robust(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, EvalError> {
    let (n, k) = x.shape();
    if n != y.len() {
        return Err(EvalError::DimensionMismatch(format!(
            "{n} design rows vs {} responses",
            y.len()
        )));
    }
    if k == 0 || n <= k {
        return Err(EvalError::TooFewObservations {
            have: n,
            need: k + 1,
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let tol = smax * (n.max(k) as f64) * f64::EPSILON;
    if smax == 0.0 || sv.iter().any(|s| *s <= tol) {
        return Err(EvalError::SingularDesign);
    }
    let coef = svd.solve(y, tol).map_err(|_| EvalError::SingularDesign)?;
    let resid = y - x * &coef;

    // (X'X)⁻¹ = V Σ⁻² Vᵀ
    let v_t = svd.v_t.as_ref().expect("V requested");
    let inv_s2 = DVector::from_iterator(k, sv.iter().map(|s| 1.0 / (s * s)));
    let xtx_inv = v_t.transpose() * DMatrix::from_diagonal(&inv_s2) * v_t;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let row = x.row(i);
        let e2 = resid[i] * resid[i];
        meat += row.transpose() * row * e2;
    }
    let cov = &xtx_inv * meat * &xtx_inv * (n as f64 / (n - k) as f64);

    let dist = StudentsT::new(0.0, 1.0, (n - k) as f64).expect("positive degrees of freedom");
    let mut se = Vec::with_capacity(k);
    let mut t = Vec::with_capacity(k);
    let mut p = Vec::with_capacity(k);
    for j in 0..k {
        let s = cov[(j, j)].max(0.0).sqrt();
        let (tj, pj) = if s > 0.0 {
            let tj = coef[j] / s;
            (tj, (2.0 * (1.0 - dist.cdf(tj.abs()))).clamp(0.0, 1.0))
        } else if coef[j] == 0.0 {
            (0.0, 1.0)
        } else {
            (coef[j].signum() * f64::INFINITY, 0.0)
        };
        se.push(s);
        t.push(tj);
        p.push(pj);
    }
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    Ok(OlsFit {
        coef: coef.iter().copied().collect(),
        se,
        t,
        p,
        residuals: resid.iter().copied().collect(),
        r2,
        n,
        k,
    })
}

/// Builds a design matrix from rows.
pub fn design(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, EvalError> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(EvalError::DimensionMismatch("ragged design rows".into()));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        k,
        rows.iter().flatten().copied(),
    ))
}
