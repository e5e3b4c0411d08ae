//! `returns.csv` and `factors.csv` readers and writers.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{FactorPanel, FactorRow, PricingError, ReturnPanel};
use crate::market_graph::FirmId;

pub const RETURNS_HEADER: [&str; 3] = ["date", "ticker", "ret"];
pub const FACTORS_HEADER: [&str; 7] = ["date", "mkt_rf", "smb", "hml", "rmw", "cma", "rf"];

#[derive(Debug, Deserialize)]
struct ReturnRow {
    date: NaiveDate,
    ticker: String,
    ret: f64,
}

#[derive(Debug, Deserialize)]
struct FactorCsvRow {
    date: NaiveDate,
    mkt_rf: f64,
    #[serde(default)]
    smb: Option<f64>,
    #[serde(default)]
    hml: Option<f64>,
    #[serde(default)]
    rmw: Option<f64>,
    #[serde(default)]
    cma: Option<f64>,
    #[serde(default)]
    rf: Option<f64>,
}

fn csv_err(e: csv::Error) -> PricingError {
    PricingError::BadRecord(e.to_string())
}

pub fn read_returns<R: Read>(reader: R) -> Result<ReturnPanel, PricingError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut panel = ReturnPanel::new();
    for row in rdr.deserialize::<ReturnRow>() {
        let row = row.map_err(csv_err)?;
        let firm = FirmId::new(&row.ticker).map_err(|e| PricingError::BadRecord(e.to_string()))?;
        panel.insert(firm, row.date, row.ret)?;
    }
    Ok(panel)
}

pub fn read_returns_file(path: &Path) -> Result<ReturnPanel, PricingError> {
    let f = fs::File::open(path)
        .map_err(|e| PricingError::BadRecord(format!("{}: {e}", path.display())))?;
    read_returns(f)
}

/// Reads factors; absent Fama–French columns stay `None`, absent `rf` is 0.
pub fn read_factors<R: Read>(reader: R) -> Result<FactorPanel, PricingError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut panel = FactorPanel::new();
    for row in rdr.deserialize::<FactorCsvRow>() {
        let row = row.map_err(csv_err)?;
        panel.push(
            row.date,
            FactorRow {
                mkt_rf: row.mkt_rf,
                smb: row.smb,
                hml: row.hml,
                rmw: row.rmw,
                cma: row.cma,
                rf: row.rf.unwrap_or(0.0),
            },
        )?;
    }
    Ok(panel)
}

pub fn read_factors_file(path: &Path) -> Result<FactorPanel, PricingError> {
    let f = fs::File::open(path)
        .map_err(|e| PricingError::BadRecord(format!("{}: {e}", path.display())))?;
    read_factors(f)
}

/// Writes returns sorted by (date, ticker).
pub fn write_returns<W: Write>(writer: W, panel: &ReturnPanel) -> Result<(), PricingError> {
    let mut rows: Vec<(NaiveDate, &FirmId, f64)> = panel
        .iter()
        .flat_map(|(f, s)| s.iter().map(move |(d, r)| (*d, f, *r)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RETURNS_HEADER).map_err(csv_err)?;
    for (d, f, r) in rows {
        w.write_record([d.to_string(), f.to_string(), r.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| PricingError::BadRecord(e.to_string()))
}

pub fn write_factors<W: Write>(writer: W, panel: &FactorPanel) -> Result<(), PricingError> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FACTORS_HEADER).map_err(csv_err)?;
    for (d, r) in panel.iter() {
        w.write_record([
            d.to_string(),
            r.mkt_rf.to_string(),
            opt(r.smb),
            opt(r.hml),
            opt(r.rmw),
            opt(r.cma),
            r.rf.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| PricingError::BadRecord(e.to_string()))
}
