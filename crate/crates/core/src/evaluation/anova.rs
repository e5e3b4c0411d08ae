use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    /// `SS_between / SS_total`.
    pub eta_squared: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
}

/// One-way ANOVA across `groups`, each with at least two observations.
pub fn anova(groups: &[Vec<f64>]) -> Result<AnovaResult, EvalError> {
    if groups.len() < 2 {
        return Err(EvalError::TooFewGroups(groups.len()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(EvalError::TooFewObservations {
            have: g.len(),
            need: 2,
        });
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = n - groups.len();
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;
    let (f, p) = if ms_within > 0.0 {
        let f = ms_between / ms_within;
        let dist = FisherSnedecor::new(df_between as f64, df_within as f64)
            .expect("positive degrees of freedom");
        (f, (1.0 - dist.cdf(f)).clamp(0.0, 1.0))
    } else if ms_between > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    let ss_total = ss_between + ss_within;
    let eta_squared = if ss_total > 0.0 {
        ss_between / ss_total
    } else {
        0.0
    };
    Ok(AnovaResult {
        f,
        p,
        eta_squared,
        df_between,
        df_within,
        ss_between,
        ss_within,
    })
}
