use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    ripple_weights, select_ripple, weights_equal, weights_markowitz, weights_minvar, weights_vol,
    PortfolioError, Strategy, WeightVector,
};
use crate::asset_pricing::ReturnPanel;
use crate::market_graph::FirmId;
use crate::propagator::ShockVector;

/// Weights formed at the close of each date.
pub type Schedule = BTreeMap<NaiveDate, WeightVector>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    /// Per-period risk-free rate subtracted in the Sharpe numerator.
    pub rf: f64,
    /// Proportional cost charged on turnover `Σ|w_t − w_{t−1}|`.
    pub cost: f64,
    pub periods_per_year: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            rf: 0.0,
            cost: 0.0,
            periods_per_year: 252.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: String,
    /// Dates on which returns were earned.
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    /// Equity after each day, starting from 1.0 before the first.
    pub equity: Vec<f64>,
    pub mean: f64,
    /// Per-period Sharpe with sample standard deviation; 0 when undefined.
    pub sharpe: f64,
    pub sharpe_annualized: f64,
    pub mdd: f64,
    pub win_rate: f64,
}

/// Largest peak-to-trough fractional loss of the compounded equity curve,
/// with the peak starting at 1.0.
pub fn max_drawdown(returns: &[f64]) -> f64 {
    let mut equity = 1.0;
    let mut peak = 1.0f64;
    let mut mdd = 0.0f64;
    for r in returns {
        equity *= 1.0 + r;
        peak = peak.max(equity);
        if peak > 0.0 {
            mdd = mdd.max((peak - equity) / peak);
        }
    }
    mdd
}

/// Metrics of a daily return series.
pub fn summarize(
    strategy: &str,
    dates: Vec<NaiveDate>,
    returns: Vec<f64>,
    cfg: &BacktestConfig,
) -> BacktestReport {
    let n = returns.len();
    let mean = if n == 0 {
        0.0
    } else {
        returns.iter().sum::<f64>() / n as f64
    };
    let sd = if n < 2 {
        0.0
    } else {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let sharpe = if sd > 0.0 { (mean - cfg.rf) / sd } else { 0.0 };
    let mut equity = Vec::with_capacity(n);
    let mut e = 1.0;
    for r in &returns {
        e *= 1.0 + r;
        equity.push(e);
    }
    let wins = returns.iter().filter(|r| **r > 0.0).count();
    BacktestReport {
        strategy: strategy.to_string(),
        dates,
        mdd: max_drawdown(&returns),
        win_rate: if n == 0 { 0.0 } else { wins as f64 / n as f64 },
        returns,
        equity,
        mean,
        sharpe,
        sharpe_annualized: sharpe * cfg.periods_per_year.sqrt(),
    }
}

/// Positions set at the close of `t` earn the return of the next panel
/// date. Firms without that return are dropped and the rest of their leg
/// (long or short) is rescaled to keep the leg's total.
pub fn backtest(
    strategy: &str,
    schedule: &Schedule,
    returns: &ReturnPanel,
    cfg: &BacktestConfig,
) -> Result<BacktestReport, PortfolioError> {
    if schedule.is_empty() {
        return Err(PortfolioError::EmptySchedule);
    }
    let panel_dates = returns.dates();
    let mut dates = Vec::with_capacity(schedule.len());
    let mut rets = Vec::with_capacity(schedule.len());
    let mut prev: WeightVector = WeightVector::new();
    for (t, w) in schedule {
        let idx = panel_dates.partition_point(|d| d <= t);
        let Some(&next) = panel_dates.get(idx) else {
            log::debug!("{t}: no later return date; rebalance dropped");
            continue;
        };
        let held = renormalize_legs(w, |f| returns.get(f, next).is_some());
        let gross: f64 = held
            .iter()
            .map(|(f, wi)| wi * returns.get(f, next).unwrap_or(0.0))
            .sum();
        let turnover: f64 = held
            .keys()
            .chain(prev.keys())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(|f| (held.get(f).unwrap_or(&0.0) - prev.get(f).unwrap_or(&0.0)).abs())
            .sum();
        dates.push(next);
        rets.push(gross - cfg.cost * turnover);
        prev = held;
    }
    if rets.is_empty() {
        return Err(PortfolioError::EmptySchedule);
    }
    Ok(summarize(strategy, dates, rets, cfg))
}

fn renormalize_legs(w: &WeightVector, available: impl Fn(&FirmId) -> bool) -> WeightVector {
    let mut out = WeightVector::new();
    for positive in [true, false] {
        let leg: Vec<(&FirmId, f64)> = w
            .iter()
            .filter(|(_, v)| if positive { **v > 0.0 } else { **v < 0.0 })
            .map(|(f, v)| (f, *v))
            .collect();
        let total: f64 = leg.iter().map(|(_, v)| v).sum();
        let kept: f64 = leg
            .iter()
            .filter(|(f, _)| available(f))
            .map(|(_, v)| v)
            .sum();
        if kept == 0.0 {
            continue;
        }
        for (f, v) in leg {
            if available(f) {
                out.insert(f.clone(), v * total / kept);
            }
        }
    }
    out
}

/// Mean vector and sample covariance over the last `lookback` panel dates
/// up to and including `end`, for firms observed on all of them.
pub fn trailing_moments(
    returns: &ReturnPanel,
    end: NaiveDate,
    lookback: usize,
) -> Option<(Vec<FirmId>, Vec<f64>, DMatrix<f64>)> {
    let dates = returns.dates();
    let stop = dates.partition_point(|d| *d <= end);
    if stop < lookback || lookback < 2 {
        return None;
    }
    let window = &dates[stop - lookback..stop];
    let mut firms = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (f, series) in returns.iter() {
        let col: Option<Vec<f64>> = window.iter().map(|d| series.get(d).copied()).collect();
        if let Some(c) = col {
            firms.push(f.clone());
            cols.push(c);
        }
    }
    if firms.is_empty() {
        return None;
    }
    let t = lookback as f64;
    let mu: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / t).collect();
    let k = firms.len();
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let s: f64 = (0..lookback)
                .map(|r| (cols[i][r] - mu[i]) * (cols[j][r] - mu[j]))
                .sum::<f64>()
                / (t - 1.0);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Some((firms, mu, cov))
}

/// Benchmark weights for each date in `dates`, estimated from the trailing
/// `lookback` returns. Dates without enough history are skipped; firms
/// with zero trailing volatility are left out of the volatility strategy.
pub fn benchmark_schedule(
    strategy: Strategy,
    returns: &ReturnPanel,
    dates: &[NaiveDate],
    lookback: usize,
    lambda: f64,
) -> Result<Schedule, PortfolioError> {
    let mut out = Schedule::new();
    for &t in dates {
        let Some((firms, mu, cov)) = trailing_moments(returns, t, lookback) else {
            continue;
        };
        let (firms, w) = match strategy {
            Strategy::Equal => {
                let w = weights_equal(firms.len())?;
                (firms, w)
            }
            Strategy::Volatility => {
                let (f, s): (Vec<FirmId>, Vec<f64>) = firms
                    .into_iter()
                    .enumerate()
                    .map(|(i, f)| (f, cov[(i, i)].max(0.0).sqrt()))
                    .filter(|(_, s)| *s > 0.0)
                    .unzip();
                if f.is_empty() {
                    continue;
                }
                let w = weights_vol(&s)?;
                (f, w)
            }
            Strategy::Markowitz => {
                let w = weights_markowitz(&mu, &cov, lambda)?;
                (firms, w)
            }
            Strategy::MinVariance => {
                let w = weights_minvar(&cov)?;
                (firms, w)
            }
            Strategy::Ripple => {
                return Err(PortfolioError::DimensionMismatch(
                    "ripple weights come from predictions".into(),
                ))
            }
        };
        out.insert(t, firms.into_iter().zip(w).collect());
    }
    Ok(out)
}

/// Decile long-short weights on every date with a prediction. The universe
/// is the set of firms with a return on that date.
pub fn ripple_schedule(
    shocks: &BTreeMap<NaiveDate, ShockVector>,
    returns: &ReturnPanel,
    decile: f64,
) -> Schedule {
    let mut out = Schedule::new();
    for (t, z) in shocks {
        let universe: Vec<FirmId> = returns
            .iter()
            .filter(|(_, s)| s.contains_key(t))
            .map(|(f, _)| f.clone())
            .collect();
        if universe.len() < 2 {
            continue;
        }
        let zm: BTreeMap<FirmId, f64> = z.iter().map(|(f, v)| (f.clone(), v)).collect();
        let (long, short) = select_ripple(&zm, &universe, decile);
        out.insert(*t, ripple_weights(&long, &short));
    }
    out
}

pub const REPORT_HEADER: &str = "strategy,daily_return,sharpe,mdd,win_rate,sharpe_annualized";
pub const EQUITY_HEADER: &str = "date,strategy,equity";

pub fn write_report_csv<W: Write>(mut w: W, reports: &[BacktestReport]) -> std::io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.strategy, r.mean, r.sharpe, r.mdd, r.win_rate, r.sharpe_annualized
        )?;
    }
    Ok(())
}

pub fn write_equity_csv<W: Write>(mut w: W, reports: &[BacktestReport]) -> std::io::Result<()> {
    writeln!(w, "{EQUITY_HEADER}")?;
    for r in reports {
        for (d, e) in r.dates.iter().zip(&r.equity) {
            writeln!(w, "{d},{},{e}", r.strategy)?;
        }
    }
    Ok(())
}
