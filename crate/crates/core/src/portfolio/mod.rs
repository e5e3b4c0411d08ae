//! Decile long-short selection, benchmark allocators and a daily-rebalance
//! backtester.
//!
//! Benchmark allocators return long-only weights on the simplex. The ripple
//! strategy is dollar-neutral: the long leg sums to +1 and the short leg to
//! −1, equally weighted within each leg.

mod backtest;
mod simplex;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_graph::FirmId;

pub use backtest::{
    backtest, benchmark_schedule, max_drawdown, ripple_schedule, summarize, trailing_moments,
    write_equity_csv, write_report_csv, BacktestConfig, BacktestReport, Schedule, EQUITY_HEADER,
    REPORT_HEADER,
};
pub use simplex::{check_covariance, mean_variance_objective, project_simplex, solve_simplex_qp};

#[derive(Debug, Error, PartialEq)]
pub enum PortfolioError {
    #[error("universe is empty")]
    EmptyUniverse,
    #[error("volatility of asset {0} is zero")]
    ZeroVolatility(usize),
    #[error("bad covariance: {0}")]
    BadCovariance(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weight schedule is empty")]
    EmptySchedule,
}

/// Firm weights for one rebalance.
pub type WeightVector = BTreeMap<FirmId, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ripple,
    Equal,
    Volatility,
    Markowitz,
    MinVariance,
}

impl Strategy {
    pub const BENCHMARKS: [Strategy; 4] = [
        Strategy::Equal,
        Strategy::Volatility,
        Strategy::Markowitz,
        Strategy::MinVariance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Ripple => "ripple",
            Strategy::Equal => "equal",
            Strategy::Volatility => "volatility",
            Strategy::Markowitz => "markowitz",
            Strategy::MinVariance => "min_variance",
        }
    }
}

pub fn weights_equal(n: usize) -> Result<Vec<f64>, PortfolioError> {
    if n == 0 {
        return Err(PortfolioError::EmptyUniverse);
    }
    Ok(vec![1.0 / n as f64; n])
}

/// Inverse-volatility weights.
pub fn weights_vol(sigmas: &[f64]) -> Result<Vec<f64>, PortfolioError> {
    if sigmas.is_empty() {
        return Err(PortfolioError::EmptyUniverse);
    }
    if let Some(i) = sigmas.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(PortfolioError::ZeroVolatility(i));
    }
    let inv: Vec<f64> = sigmas.iter().map(|s| 1.0 / s).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|v| v / total).collect())
}

/// Long-only mean-variance weights maximizing `w'μ − (λ/2)w'Σw`.
pub fn weights_markowitz(
    mu: &[f64],
    sigma: &DMatrix<f64>,
    lambda: f64,
) -> Result<Vec<f64>, PortfolioError> {
    solve_simplex_qp(mu, sigma, lambda)
}

/// Long-only minimum-variance weights.
pub fn weights_minvar(sigma: &DMatrix<f64>) -> Result<Vec<f64>, PortfolioError> {
    solve_simplex_qp(&vec![0.0; sigma.nrows()], sigma, 1.0)
}

/// Long and short legs from predicted impacts. Firms are ranked by `Z`
/// descending with ties broken by ticker ascending; the first
/// `⌈decile·n⌉` go long and the last `⌈decile·n⌉` go short. Leg size is
/// capped at `⌊n/2⌋` so the legs stay disjoint.
pub fn select_ripple(
    z: &BTreeMap<FirmId, f64>,
    universe: &[FirmId],
    decile: f64,
) -> (Vec<FirmId>, Vec<FirmId>) {
    let n = universe.len();
    let k = ((decile * n as f64).ceil() as usize).min(n / 2);
    let mut ranked: Vec<(&FirmId, f64)> = universe
        .iter()
        .map(|f| (f, z.get(f).copied().unwrap_or(0.0)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let long = ranked[..k].iter().map(|(f, _)| (*f).clone()).collect();
    let short = ranked[n - k..].iter().map(|(f, _)| (*f).clone()).collect();
    (long, short)
}

/// Equal weights within each leg: `+1/|L|` long, `−1/|S|` short.
pub fn ripple_weights(long: &[FirmId], short: &[FirmId]) -> WeightVector {
    let mut w = WeightVector::new();
    for f in long {
        w.insert(f.clone(), 1.0 / long.len() as f64);
    }
    for f in short {
        w.insert(f.clone(), -1.0 / short.len() as f64);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn firms(n: usize) -> Vec<FirmId> {
        (0..n)
            .map(|i| FirmId::new(format!("F{i:02}")).unwrap())
            .collect()
    }

    #[test]
    fn equal_weights() {
        assert_eq!(weights_equal(4).unwrap(), vec![0.25; 4]);
        assert_eq!(weights_equal(1).unwrap(), vec![1.0]);
        assert!((weights_equal(7).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(weights_equal(0), Err(PortfolioError::EmptyUniverse));
    }

    #[test]
    fn vol_weights() {
        assert_eq!(weights_vol(&[1.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        let w = weights_vol(&[1.0, 3.0]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert_eq!(
            weights_vol(&[1.0, 0.0]),
            Err(PortfolioError::ZeroVolatility(1))
        );
    }

    #[test]
    fn minvar_diagonal() {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let w = weights_minvar(&s).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-4 && (w[1] - 0.2).abs() < 1e-4);
        let w = weights_minvar(&DMatrix::identity(3, 3)).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-9));
    }

    #[test]
    fn markowitz_symmetric_case() {
        let w = weights_markowitz(&[0.1, 0.1, 0.1], &DMatrix::identity(3, 3), 1.0).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn markowitz_large_lambda_approaches_minvar() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 2.0, 0.3, 0.1, 0.3, 0.5]);
        let a = weights_markowitz(&[0.05, 0.05, 0.05], &s, 1e6).unwrap();
        let b = weights_minvar(&s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn decile_selection() {
        let u = firms(10);
        let z: BTreeMap<FirmId, f64> = u
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i as f64))
            .collect();
        let (l, s) = select_ripple(&z, &u, 0.1);
        assert_eq!(l, vec![u[9].clone()]);
        assert_eq!(s, vec![u[0].clone()]);

        let (l, s) = select_ripple(&BTreeMap::new(), &u, 0.1);
        assert_eq!(l, vec![u[0].clone()]);
        assert_eq!(s, vec![u[9].clone()]);

        let (l, s) = select_ripple(&BTreeMap::new(), &firms(25), 0.1);
        assert_eq!((l.len(), s.len()), (3, 3));
    }

    proptest! {
        #[test]
        fn benchmark_weights_on_simplex(
            sig in prop::collection::vec(0.01f64..1.0, 1..6),
            mu in prop::collection::vec(-0.1f64..0.1, 6),
            seed in prop::collection::vec(-1.0f64..1.0, 36),
        ) {
            let n = sig.len();
            let a = DMatrix::from_row_slice(n, n, &seed[..n * n]);
            let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.01;
            for w in [
                weights_equal(n).unwrap(),
                weights_vol(&sig).unwrap(),
                weights_markowitz(&mu[..n], &cov, 1.0).unwrap(),
                weights_minvar(&cov).unwrap(),
            ] {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                prop_assert!(w.iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn ripple_legs_are_neutral(z in prop::collection::vec(-1.0f64..1.0, 2..40), decile in 0.01f64..0.5) {
            let u = firms(z.len());
            let zm = u.iter().cloned().zip(z.iter().copied()).collect();
            let (l, s) = select_ripple(&zm, &u, decile);
            prop_assert!(l.iter().all(|f| !s.contains(f)));
            let w = ripple_weights(&l, &s);
            let gross: f64 = w.values().map(|v| v.abs()).sum();
            let net: f64 = w.values().sum();
            prop_assert!((gross - 2.0).abs() < 1e-12);
            prop_assert!(net.abs() < 1e-12);
        }
    }
}
