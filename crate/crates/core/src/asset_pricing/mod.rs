//! CAPM and Fama–French factor models: rolling loadings, expected returns
//! and the residual (abnormal return) panel.

mod estimate;
pub mod io;
mod residuals;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_graph::FirmId;

pub use estimate::{estimate_beta, rolling_estimates, Moments, WindowConfig};
pub use residuals::{residual_panel, BetaSource, ResidualPanel};

#[derive(Debug, Error, PartialEq)]
pub enum PricingError {
    #[error("insufficient history for {firm} at {date}: {have} of {need} observations")]
    InsufficientHistory {
        firm: FirmId,
        date: NaiveDate,
        have: usize,
        need: usize,
    },
    #[error("market factor has zero variance in the estimation window")]
    DegenerateMarket,
    #[error("factor `{0}` is missing")]
    MissingFactor(&'static str),
    #[error("dates out of order for {0}")]
    Unordered(String),
    #[error("non-finite value for {0}")]
    NonFinite(String),
    #[error("invalid record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PricingModel {
    #[default]
    Capm,
    Ff3,
    Ff5,
}

impl PricingModel {
    /// Number of factor regressors (excluding the intercept).
    pub fn factor_count(&self) -> usize {
        match self {
            PricingModel::Capm => 1,
            PricingModel::Ff3 => 3,
            PricingModel::Ff5 => 5,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PricingModel::Capm => "capm",
            PricingModel::Ff3 => "ff3",
            PricingModel::Ff5 => "ff5",
        }
    }
}

impl fmt::Display for PricingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PricingModel {
    type Err = PricingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "capm" => Ok(PricingModel::Capm),
            "ff3" | "fama3" => Ok(PricingModel::Ff3),
            "ff5" | "fama5" => Ok(PricingModel::Ff5),
            other => Err(PricingError::BadRecord(format!("unknown model `{other}`"))),
        }
    }
}

/// One date of factor returns (per-period, dimensionless).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FactorRow {
    /// Market excess return `R_m − R_f`.
    pub mkt_rf: f64,
    pub smb: Option<f64>,
    pub hml: Option<f64>,
    pub rmw: Option<f64>,
    pub cma: Option<f64>,
    pub rf: f64,
}

impl FactorRow {
    pub fn capm(mkt_rf: f64, rf: f64) -> Self {
        Self {
            mkt_rf,
            rf,
            ..Default::default()
        }
    }

    /// Factor regressors for `model`, market first.
    pub fn regressors(&self, model: PricingModel) -> Result<Vec<f64>, PricingError> {
        let mut out = vec![self.mkt_rf];
        if matches!(model, PricingModel::Ff3 | PricingModel::Ff5) {
            out.push(self.smb.ok_or(PricingError::MissingFactor("smb"))?);
            out.push(self.hml.ok_or(PricingError::MissingFactor("hml"))?);
        }
        if model == PricingModel::Ff5 {
            out.push(self.rmw.ok_or(PricingError::MissingFactor("rmw"))?);
            out.push(self.cma.ok_or(PricingError::MissingFactor("cma"))?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactorPanel {
    rows: BTreeMap<NaiveDate, FactorRow>,
}

impl FactorPanel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; dates must be strictly increasing and values finite.
    pub fn push(&mut self, date: NaiveDate, row: FactorRow) -> Result<(), PricingError> {
        if let Some((last, _)) = self.rows.last_key_value() {
            if date <= *last {
                return Err(PricingError::Unordered(format!("factors at {date}")));
            }
        }
        let vals = [
            Some(row.mkt_rf),
            row.smb,
            row.hml,
            row.rmw,
            row.cma,
            Some(row.rf),
        ];
        if vals.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PricingError::NonFinite(format!("factors at {date}")));
        }
        self.rows.insert(date, row);
        Ok(())
    }

    pub fn get(&self, date: NaiveDate) -> Option<&FactorRow> {
        self.rows.get(&date)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.rows.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, &FactorRow)> {
        self.rows.iter().map(|(d, r)| (*d, r))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// True when every row carries all five Fama–French factors.
    pub fn has_ff5(&self) -> bool {
        self.rows
            .values()
            .all(|r| r.regressors(PricingModel::Ff5).is_ok())
    }
}

/// Simple per-period returns by firm and date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReturnPanel {
    by_firm: BTreeMap<FirmId, BTreeMap<NaiveDate, f64>>,
}

impl ReturnPanel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, firm: FirmId, date: NaiveDate, ret: f64) -> Result<(), PricingError> {
        if !ret.is_finite() {
            return Err(PricingError::NonFinite(format!("{firm} at {date}")));
        }
        let series = self.by_firm.entry(firm.clone()).or_default();
        if series.insert(date, ret).is_some() {
            return Err(PricingError::Unordered(format!(
                "duplicate return for {firm} at {date}"
            )));
        }
        Ok(())
    }

    pub fn firms(&self) -> impl Iterator<Item = &FirmId> {
        self.by_firm.keys()
    }

    pub fn series(&self, firm: &FirmId) -> Option<&BTreeMap<NaiveDate, f64>> {
        self.by_firm.get(firm)
    }

    pub fn get(&self, firm: &FirmId, date: NaiveDate) -> Option<f64> {
        self.by_firm.get(firm)?.get(&date).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FirmId, &BTreeMap<NaiveDate, f64>)> {
        self.by_firm.iter()
    }

    /// Union of all dates with at least one return.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut all: Vec<NaiveDate> = self
            .by_firm
            .values()
            .flat_map(|s| s.keys().copied())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn firm_count(&self) -> usize {
        self.by_firm.len()
    }
}

/// Factor sensitivities. Entries a model does not use are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Loadings {
    pub beta: f64,
    pub smb: f64,
    pub hml: f64,
    pub rmw: f64,
    pub cma: f64,
}

impl Loadings {
    pub fn capm(beta: f64) -> Self {
        Self {
            beta,
            ..Default::default()
        }
    }

    fn from_slice(model: PricingModel, coefs: &[f64]) -> Self {
        let mut l = Loadings::capm(coefs[0]);
        if matches!(model, PricingModel::Ff3 | PricingModel::Ff5) {
            l.smb = coefs[1];
            l.hml = coefs[2];
        }
        if model == PricingModel::Ff5 {
            l.rmw = coefs[3];
            l.cma = coefs[4];
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaEstimate {
    pub firm: FirmId,
    pub as_of: NaiveDate,
    pub model: PricingModel,
    pub loadings: Loadings,
    pub window_len: usize,
}

/// Model-implied expected return:
/// `R_f + β(R_m − R_f) [+ s·SMB + h·HML [+ r·RMW + c·CMA]]`.
pub fn expected_return(
    model: PricingModel,
    loadings: &Loadings,
    factors: &FactorRow,
) -> Result<f64, PricingError> {
    let x = factors.regressors(model)?;
    let mut e = factors.rf + loadings.beta * x[0];
    if matches!(model, PricingModel::Ff3 | PricingModel::Ff5) {
        e += loadings.smb * x[1] + loadings.hml * x[2];
    }
    if model == PricingModel::Ff5 {
        e += loadings.rmw * x[3] + loadings.cma * x[4];
    }
    Ok(e)
}
