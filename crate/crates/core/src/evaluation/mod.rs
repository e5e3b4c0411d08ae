//! Propagator-constrained pricing regression, ANOVA and refusal statistics.

mod anova;
mod ols;
mod pipeline;

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagator::{Outcome, RefusalReason};

pub use anova::{anova, AnovaResult};
pub use ols::{design, ols_robust, OlsFit};
pub use pipeline::{
    ablation_series, cross_sections, evaluate, write_anova_csv, write_regression_csv,
    ControlSource, CrossSection, EvalConfig, EvalReport, ANOVA_HEADER, REGRESSION_HEADER,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("too few observations: {have}, need {need}")]
    TooFewObservations { have: usize, need: usize },
    #[error("cross-sectional residual volatility is zero")]
    DegenerateCrossSection,
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("non-finite input")]
    NonFinite,
}

/// Output of the propagator-constrained regression
/// `ε_j/σ_ε = γ0 + γ1 Φ_j + Σ_k Γ_k X_kj + ν_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub gamma0: f64,
    pub gamma1: f64,
    pub controls: Vec<f64>,
    /// HC1 standard errors in regressor order `[1, Φ, X…]`.
    pub se: Vec<f64>,
    pub t_gamma1: f64,
    pub p_gamma1: f64,
    /// `1 − E[(ε/σ − γ̂1Φ)²] / Var(ε/σ)`, unclipped; may be negative.
    pub r2_phi: f64,
    /// Plain regression R².
    pub r2: f64,
    pub n: usize,
}

/// Regresses standardized residuals on `[1, Φ, X…]`. Each row is
/// `(ε_j/σ_ε, Φ_j, controls_j)`; callers standardize per cross-section.
pub fn regress_standardized(
    y: &[f64],
    phi: &[f64],
    controls: &[Vec<f64>],
) -> Result<RegressionResult, EvalError> {
    let n = y.len();
    if phi.len() != n || (!controls.is_empty() && controls.len() != n) {
        return Err(EvalError::DimensionMismatch(format!(
            "{n} responses, {} propagator scores, {} control rows",
            phi.len(),
            controls.len()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut r = vec![1.0, phi[j]];
            if let Some(c) = controls.get(j) {
                r.extend_from_slice(c);
            }
            r
        })
        .collect();
    let x = design(&rows)?;
    let fit = ols_robust(&x, &DVector::from_row_slice(y))?;
    let gamma1 = fit.coef[1];
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let mse = y
        .iter()
        .zip(phi)
        .map(|(v, p)| (v - gamma1 * p).powi(2))
        .sum::<f64>()
        / n as f64;
    let r2_phi = if var > 0.0 { 1.0 - mse / var } else { 0.0 };
    Ok(RegressionResult {
        gamma0: fit.coef[0],
        gamma1,
        controls: fit.coef[2..].to_vec(),
        se: fit.se.clone(),
        t_gamma1: fit.t[1],
        p_gamma1: fit.p[1],
        r2_phi,
        r2: fit.r2,
        n,
    })
}

/// Single cross-section form: residuals `eps` are divided by `sigma_eps`.
pub fn pricing_regression(
    eps: &[f64],
    sigma_eps: f64,
    phi: &[f64],
    controls: &[Vec<f64>],
) -> Result<RegressionResult, EvalError> {
    if !(sigma_eps > 0.0) {
        return Err(EvalError::DegenerateCrossSection);
    }
    let y: Vec<f64> = eps.iter().map(|e| e / sigma_eps).collect();
    regress_standardized(&y, phi, controls)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefusalStats {
    pub total: usize,
    pub refusals: usize,
    pub by_reason: BTreeMap<RefusalReason, usize>,
    pub rate: f64,
}

/// Tallies parse outcomes; `None` marks a valid prediction.
pub fn refusal_stats<I: IntoIterator<Item = Option<RefusalReason>>>(log: I) -> RefusalStats {
    let mut s = RefusalStats::default();
    for o in log {
        s.total += 1;
        if let Some(r) = o {
            s.refusals += 1;
            *s.by_reason.entry(r).or_insert(0) += 1;
        }
    }
    s.rate = if s.total == 0 {
        0.0
    } else {
        s.refusals as f64 / s.total as f64
    };
    s
}

pub fn refusal_stats_of(outcomes: &[Outcome]) -> RefusalStats {
    refusal_stats(outcomes.iter().map(|o| o.refusal().map(|r| r.reason)))
}
