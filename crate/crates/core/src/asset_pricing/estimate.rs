use std::collections::{BTreeMap, VecDeque};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BetaEstimate, FactorPanel, Loadings, PricingError, PricingModel};
use crate::market_graph::FirmId;

/// Rolling estimation window, in observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window: usize,
    pub min_obs: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 252,
            min_obs: 60,
        }
    }
}

/// Raw cross-product sums `Σ z zᵀ` of the augmented observation
/// `z = [1, factors…, excess return]`, updatable in O(d²) per observation.
#[derive(Debug, Clone)]
pub struct Moments {
    model: PricingModel,
    dim: usize,
    sums: Vec<f64>,
}

impl Moments {
    pub fn new(model: PricingModel) -> Self {
        let dim = model.factor_count() + 2;
        Self {
            model,
            dim,
            sums: vec![0.0; dim * dim],
        }
    }

    pub fn count(&self) -> usize {
        self.sums[0].round() as usize
    }

    fn augmented(&self, factors: &[f64], excess: f64) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim);
        z.push(1.0);
        z.extend_from_slice(factors);
        z.push(excess);
        z
    }

    fn update(&mut self, factors: &[f64], excess: f64, sign: f64) {
        let z = self.augmented(factors, excess);
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.sums[i * self.dim + j] += sign * z[i] * z[j];
            }
        }
    }

    pub fn add(&mut self, factors: &[f64], excess: f64) {
        self.update(factors, excess, 1.0);
    }

    pub fn remove(&mut self, factors: &[f64], excess: f64) {
        self.update(factors, excess, -1.0);
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.sums[i * self.dim + j]
    }

    /// CAPM: sample `Cov(R_j − R_f, R_m − R_f) / Var(R_m − R_f)`.
    /// Multi-factor models: OLS with intercept on the factor returns.
    pub fn fit(&self) -> Result<Loadings, PricingError> {
        let n = self.at(0, 0);
        let y = self.dim - 1;
        match self.model {
            PricingModel::Capm => {
                let (sx, sy) = (self.at(0, 1), self.at(0, y));
                let sxx = self.at(1, 1);
                let var = sxx - sx * sx / n;
                if !(var > sxx * 1e-12) {
                    return Err(PricingError::DegenerateMarket);
                }
                let cov = self.at(1, y) - sx * sy / n;
                Ok(Loadings::capm(cov / var))
            }
            PricingModel::Ff3 | PricingModel::Ff5 => {
                let k = y;
                let xtx = DMatrix::from_fn(k, k, |i, j| self.at(i, j));
                let xty = DVector::from_fn(k, |i, _| self.at(i, y));
                // centered factor variances guard against a flat market
                let sxx = self.at(1, 1);
                if !(sxx - self.at(0, 1).powi(2) / n > sxx * 1e-12) {
                    return Err(PricingError::DegenerateMarket);
                }
                let chol = xtx.cholesky().ok_or(PricingError::DegenerateMarket)?;
                let coefs = chol.solve(&xty);
                if coefs.iter().any(|c| !c.is_finite()) {
                    return Err(PricingError::DegenerateMarket);
                }
                Ok(Loadings::from_slice(self.model, &coefs.as_slice()[1..]))
            }
        }
    }
}

fn observations<'a>(
    series: &'a BTreeMap<NaiveDate, f64>,
    factors: &'a FactorPanel,
    model: PricingModel,
) -> impl Iterator<Item = (NaiveDate, Vec<f64>, f64)> + 'a {
    series.iter().filter_map(move |(d, r)| {
        let row = factors.get(*d)?;
        let x = row.regressors(model).ok()?;
        Some((*d, x, r - row.rf))
    })
}

/// Loadings for `firm` as of `as_of`, using the last `cfg.window`
/// observations strictly before `as_of`.
pub fn estimate_beta(
    firm: &FirmId,
    series: &BTreeMap<NaiveDate, f64>,
    factors: &FactorPanel,
    as_of: NaiveDate,
    model: PricingModel,
    cfg: &WindowConfig,
) -> Result<BetaEstimate, PricingError> {
    let obs: Vec<_> = observations(series, factors, model)
        .filter(|(d, _, _)| *d < as_of)
        .collect();
    let start = obs.len().saturating_sub(cfg.window);
    let used = &obs[start..];
    if used.len() < cfg.min_obs.max(2) {
        return Err(PricingError::InsufficientHistory {
            firm: firm.clone(),
            date: as_of,
            have: used.len(),
            need: cfg.min_obs.max(2),
        });
    }
    let mut m = Moments::new(model);
    for (_, x, y) in used {
        m.add(x, *y);
    }
    Ok(BetaEstimate {
        firm: firm.clone(),
        as_of,
        model,
        loadings: m.fit()?,
        window_len: used.len(),
    })
}

/// Rolling loadings for one firm at each of its return dates, the window
/// ending the observation before that date. Cells without enough history
/// carry the error.
pub fn rolling_estimates(
    firm: &FirmId,
    series: &BTreeMap<NaiveDate, f64>,
    factors: &FactorPanel,
    model: PricingModel,
    cfg: &WindowConfig,
) -> Vec<(NaiveDate, Result<BetaEstimate, PricingError>)> {
    let need = cfg.min_obs.max(2);
    let mut window: VecDeque<(Vec<f64>, f64)> = VecDeque::with_capacity(cfg.window + 1);
    let mut m = Moments::new(model);
    let mut out = Vec::with_capacity(series.len());
    for (date, x, y) in observations(series, factors, model) {
        let est = if window.len() >= need {
            m.fit().map(|loadings| BetaEstimate {
                firm: firm.clone(),
                as_of: date,
                model,
                loadings,
                window_len: window.len(),
            })
        } else {
            Err(PricingError::InsufficientHistory {
                firm: firm.clone(),
                date,
                have: window.len(),
                need,
            })
        };
        out.push((date, est));
        m.add(&x, y);
        window.push_back((x, y));
        if window.len() > cfg.window {
            let (ox, oy) = window.pop_front().expect("non-empty window");
            m.remove(&ox, oy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset_pricing::FactorRow;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n).map(|i| d0 + chrono::Days::new(i as u64)).collect()
    }

    fn panel(mkt: &[f64], rf: f64) -> FactorPanel {
        let mut p = FactorPanel::new();
        for (d, m) in dates(mkt.len()).into_iter().zip(mkt) {
            p.push(d, FactorRow::capm(*m, rf)).unwrap();
        }
        p
    }

    fn series(rets: &[f64]) -> BTreeMap<NaiveDate, f64> {
        dates(rets.len())
            .into_iter()
            .zip(rets.iter().copied())
            .collect()
    }

    fn firm() -> FirmId {
        FirmId::new("X").unwrap()
    }

    fn cfg(window: usize, min_obs: usize) -> WindowConfig {
        WindowConfig { window, min_obs }
    }

    #[test]
    fn exact_linear_beta() {
        let mkt = [0.01, -0.02, 0.015, 0.003, -0.007, 0.02, 0.0];
        let rets: Vec<f64> = mkt.iter().map(|m| 2.0 * m).collect();
        let as_of = dates(8)[7];
        let est = estimate_beta(
            &firm(),
            &series(&rets),
            &panel(&mkt, 0.0),
            as_of,
            PricingModel::Capm,
            &cfg(252, 5),
        )
        .unwrap();
        assert!((est.loadings.beta - 2.0).abs() < 1e-10);
        assert_eq!(est.window_len, 7);
    }

    #[test]
    fn constant_return_has_zero_beta() {
        let mkt = [0.01, -0.02, 0.015, 0.003, -0.007];
        let est = estimate_beta(
            &firm(),
            &series(&[0.004; 5]),
            &panel(&mkt, 0.0),
            dates(6)[5],
            PricingModel::Capm,
            &cfg(252, 5),
        )
        .unwrap();
        assert!(est.loadings.beta.abs() < 1e-12);
    }

    /// Closed-form simple regression slope via the 2×2 normal equations,
    /// solved by Cramer's rule.
    fn normal_equation_slope(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let det = n * sxx - sx * sx;
        (n * sxy - sx * sy) / det
    }

    #[test]
    fn five_point_beta_matches_normal_equations() {
        let mkt = [0.012, -0.004, 0.007, -0.015, 0.021];
        let rets = [0.020, -0.001, 0.006, -0.030, 0.025];
        let rf = 0.0002;
        let est = estimate_beta(
            &firm(),
            &series(&rets),
            &panel(&mkt, rf),
            dates(6)[5],
            PricingModel::Capm,
            &cfg(252, 5),
        )
        .unwrap();
        let excess: Vec<f64> = rets.iter().map(|r| r - rf).collect();
        assert!((est.loadings.beta - normal_equation_slope(&mkt, &excess)).abs() < 1e-10);
    }

    #[test]
    fn market_against_itself_is_one() {
        let mkt = [0.012, -0.004, 0.007, -0.015, 0.021, 0.003];
        let est = estimate_beta(
            &firm(),
            &series(&mkt),
            &panel(&mkt, 0.0),
            dates(7)[6],
            PricingModel::Capm,
            &cfg(252, 3),
        )
        .unwrap();
        assert!((est.loadings.beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn insufficient_and_degenerate() {
        let mkt = [0.01, 0.02];
        let e = estimate_beta(
            &firm(),
            &series(&[0.0, 0.0]),
            &panel(&mkt, 0.0),
            dates(3)[2],
            PricingModel::Capm,
            &cfg(252, 5),
        );
        assert!(matches!(
            e,
            Err(PricingError::InsufficientHistory {
                have: 2,
                need: 5,
                ..
            })
        ));
        let flat = [0.01; 6];
        let e = estimate_beta(
            &firm(),
            &series(&[0.0, 0.01, 0.02, 0.0, 0.01, 0.0]),
            &panel(&flat, 0.0),
            dates(7)[6],
            PricingModel::Capm,
            &cfg(252, 5),
        );
        assert_eq!(e, Err(PricingError::DegenerateMarket));
    }

    #[test]
    fn window_uses_only_prior_observations() {
        // the as-of date's own return must not leak into the estimate
        let mkt = [0.01, -0.01, 0.02, -0.02, 0.5];
        let rets = [0.01, -0.01, 0.02, -0.02, -9.0];
        let est = estimate_beta(
            &firm(),
            &series(&rets),
            &panel(&mkt, 0.0),
            dates(5)[4],
            PricingModel::Capm,
            &cfg(252, 4),
        )
        .unwrap();
        assert!((est.loadings.beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rolling_matches_fresh_estimates() {
        let n = 40;
        let mkt: Vec<f64> = (0..n)
            .map(|i| ((i * 7919) % 37) as f64 / 1000.0 - 0.018)
            .collect();
        let rets: Vec<f64> = mkt
            .iter()
            .enumerate()
            .map(|(i, m)| 1.3 * m + ((i * 104729) % 13) as f64 / 5000.0)
            .collect();
        let (s, p) = (series(&rets), panel(&mkt, 0.0001));
        let c = cfg(10, 6);
        for (d, est) in rolling_estimates(&firm(), &s, &p, PricingModel::Capm, &c) {
            let fresh = estimate_beta(&firm(), &s, &p, d, PricingModel::Capm, &c);
            match (est, fresh) {
                (Ok(a), Ok(b)) => {
                    assert!((a.loadings.beta - b.loadings.beta).abs() < 1e-10);
                    assert_eq!(a.window_len, b.window_len);
                }
                (Err(_), Err(_)) => {}
                other => panic!("mismatch at {d}: {other:?}"),
            }
        }
    }

    #[test]
    fn ff3_recovers_exact_loadings() {
        let n = 30;
        let ds = dates(n + 1);
        let mut p = FactorPanel::new();
        let mut s = BTreeMap::new();
        for (i, d) in ds.iter().enumerate() {
            let mkt = ((i * 31) % 17) as f64 / 800.0 - 0.01;
            let smb = ((i * 13) % 11) as f64 / 1500.0 - 0.003;
            let hml = ((i * 29) % 7) as f64 / 2000.0 - 0.0015;
            p.push(
                *d,
                FactorRow {
                    mkt_rf: mkt,
                    smb: Some(smb),
                    hml: Some(hml),
                    rf: 0.0001,
                    ..Default::default()
                },
            )
            .unwrap();
            s.insert(*d, 0.0001 + 0.0004 + 0.8 * mkt + 0.5 * smb - 0.3 * hml);
        }
        let est = estimate_beta(&firm(), &s, &p, ds[n], PricingModel::Ff3, &cfg(252, 10)).unwrap();
        assert!((est.loadings.beta - 0.8).abs() < 1e-9);
        assert!((est.loadings.smb - 0.5).abs() < 1e-9);
        assert!((est.loadings.hml + 0.3).abs() < 1e-9);
    }
}
