use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::{
    estimate::rolling_estimates, expected_return, FactorPanel, Loadings, PricingModel, ReturnPanel,
    WindowConfig,
};
use crate::market_graph::FirmId;

/// Where factor loadings come from when computing residuals.
#[derive(Debug, Clone)]
pub enum BetaSource {
    /// Rolling OLS over trailing observations.
    Rolling(WindowConfig),
    /// Fixed, externally known loadings (e.g. a generator's true betas).
    Known(BTreeMap<FirmId, Loadings>),
}

impl Default for BetaSource {
    fn default() -> Self {
        BetaSource::Rolling(WindowConfig::default())
    }
}

/// Pricing residuals `ε = R − E[R]` by date and firm, with the per-date
/// cross-sectional sample standard deviation `σ_ε`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualPanel {
    cells: BTreeMap<NaiveDate, BTreeMap<FirmId, f64>>,
    sigma: BTreeMap<NaiveDate, f64>,
    loadings: BTreeMap<NaiveDate, BTreeMap<FirmId, Loadings>>,
    missing: usize,
}

impl ResidualPanel {
    /// Builds a panel directly from residual cells; `σ_ε` is recomputed.
    pub fn from_cells(cells: BTreeMap<NaiveDate, BTreeMap<FirmId, f64>>) -> Self {
        let sigma = cells
            .iter()
            .filter(|(_, cs)| !cs.is_empty())
            .map(|(d, cs)| (*d, cross_sectional_std(cs.values().copied())))
            .collect();
        Self {
            cells,
            sigma,
            loadings: BTreeMap::new(),
            missing: 0,
        }
    }

    pub fn residual(&self, date: NaiveDate, firm: &FirmId) -> Option<f64> {
        self.cells.get(&date)?.get(firm).copied()
    }

    pub fn cross_section(&self, date: NaiveDate) -> Option<&BTreeMap<FirmId, f64>> {
        self.cells.get(&date)
    }

    pub fn sigma(&self, date: NaiveDate) -> Option<f64> {
        self.sigma.get(&date).copied()
    }

    /// Loadings used for the residual at `(date, firm)`.
    pub fn loadings(&self, date: NaiveDate, firm: &FirmId) -> Option<&Loadings> {
        self.loadings.get(&date)?.get(firm)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.cells.keys().copied()
    }

    /// First panel date strictly after `date`.
    pub fn next_date_after(&self, date: NaiveDate) -> Option<NaiveDate> {
        use std::ops::Bound::{Excluded, Unbounded};
        self.cells
            .range((Excluded(date), Unbounded))
            .next()
            .map(|(d, _)| *d)
    }

    /// Number of (date, firm) cells skipped for lack of a usable estimate.
    pub fn missing_cells(&self) -> usize {
        self.missing
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, &BTreeMap<FirmId, f64>)> {
        self.cells.iter().map(|(d, c)| (*d, c))
    }
}

/// Sample standard deviation (n − 1); zero for a single observation.
pub(crate) fn cross_sectional_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Residuals for every (date, firm) cell with a usable loading estimate.
/// Cells without enough history are counted as missing, never imputed.
pub fn residual_panel(
    returns: &ReturnPanel,
    factors: &FactorPanel,
    model: PricingModel,
    source: &BetaSource,
) -> ResidualPanel {
    let mut cells: BTreeMap<NaiveDate, BTreeMap<FirmId, f64>> = BTreeMap::new();
    let mut loadings: BTreeMap<NaiveDate, BTreeMap<FirmId, Loadings>> = BTreeMap::new();
    let mut missing = 0usize;
    let mut record = |date: NaiveDate, firm: &FirmId, ret: f64, l: Loadings| -> usize {
        let Some(Ok(e)) = factors.get(date).map(|row| expected_return(model, &l, row)) else {
            return 1;
        };
        cells.entry(date).or_default().insert(firm.clone(), ret - e);
        loadings.entry(date).or_default().insert(firm.clone(), l);
        0
    };
    for (firm, series) in returns.iter() {
        match source {
            BetaSource::Known(known) => {
                let Some(l) = known.get(firm) else {
                    missing += series.len();
                    continue;
                };
                for (d, r) in series {
                    missing += record(*d, firm, *r, *l);
                }
            }
            BetaSource::Rolling(cfg) => {
                let rolled = rolling_estimates(firm, series, factors, model, cfg);
                let skipped = series.len() - rolled.len();
                let mut failed = 0usize;
                for (d, est) in rolled {
                    match est {
                        Ok(b) => failed += record(d, firm, series[&d], b.loadings),
                        Err(e) => {
                            log::trace!("{e}");
                            failed += 1;
                        }
                    }
                }
                missing += skipped + failed;
            }
        }
    }
    let mut panel = ResidualPanel::from_cells(cells);
    panel.loadings = loadings;
    panel.missing = missing;
    panel
}
