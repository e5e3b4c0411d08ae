use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{GroundTruth, SynthError, SynthMarket};
use crate::asset_pricing::io::{write_factors, write_returns};
use crate::market_graph::io::write_edges;
use crate::market_graph::FirmId;
use crate::propagator::io::write_events;

pub const TRUTH_HEADER: [&str; 4] = ["event_id", "impact_date", "ticker", "impact"];

/// Writes `truth.csv`, one row per nonzero impact.
pub fn write_truth<W: Write>(writer: W, truth: &GroundTruth) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRUTH_HEADER)?;
    for (id, m) in &truth.impacts {
        let date = truth.impact_dates[id].to_string();
        for (f, x) in m {
            w.write_record([id.as_str(), &date, f.as_str(), &x.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads impacts back from `truth.csv`.
pub fn read_truth<R: Read>(
    reader: R,
) -> Result<BTreeMap<String, BTreeMap<FirmId, f64>>, SynthError> {
    let mut out: BTreeMap<String, BTreeMap<FirmId, f64>> = BTreeMap::new();
    let mut r = csv::Reader::from_reader(reader);
    for row in r.records() {
        let row = row?;
        let bad = || SynthError::InfeasibleConfig(format!("bad truth row {row:?}"));
        let firm = FirmId::new(row.get(2).ok_or_else(bad)?).map_err(|_| bad())?;
        let x: f64 = row.get(3).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        NaiveDate::parse_from_str(row.get(1).ok_or_else(bad)?, "%Y-%m-%d").map_err(|_| bad())?;
        out.entry(row.get(0).ok_or_else(bad)?.to_string())
            .or_default()
            .insert(firm, x);
    }
    Ok(out)
}

fn create(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<BufWriter<File>, SynthError> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    out.push(path);
    Ok(BufWriter::new(f))
}

/// Writes `edges.csv`, `returns.csv`, `factors.csv`, `events.jsonl`,
/// `truth.csv` and `betas.csv` into `dir`.
pub fn write_dataset(dir: &Path, m: &SynthMarket) -> Result<Vec<PathBuf>, SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    write_edges(create(dir, "edges.csv", &mut paths)?, &m.edges)?;
    write_returns(create(dir, "returns.csv", &mut paths)?, &m.returns)?;
    write_factors(create(dir, "factors.csv", &mut paths)?, &m.factors)?;
    write_events(create(dir, "events.jsonl", &mut paths)?, &m.events)?;
    write_truth(create(dir, "truth.csv", &mut paths)?, &m.truth)?;
    let mut w = csv::Writer::from_writer(create(dir, "betas.csv", &mut paths)?);
    w.write_record(["ticker", "beta"])?;
    for (f, b) in &m.truth.betas {
        w.write_record([f.as_str(), &b.to_string()])?;
    }
    w.flush()?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn dataset_round_trips_through_readers() {
        let cfg = SynthConfig {
            firms: 12,
            events: 10,
            months: 2,
            warmup_days: 3,
            k: 5,
            l: 10,
            ..SynthConfig::default()
        };
        let m = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &m).unwrap();
        let edges =
            crate::market_graph::io::read_edges_file(&dir.path().join("edges.csv")).unwrap();
        assert_eq!(edges, m.edges);
        let events =
            crate::propagator::io::read_events_file(&dir.path().join("events.jsonl")).unwrap();
        assert_eq!(events, m.events);
        let returns =
            crate::asset_pricing::io::read_returns_file(&dir.path().join("returns.csv")).unwrap();
        assert_eq!(returns, m.returns);
        let truth = read_truth(File::open(dir.path().join("truth.csv")).unwrap()).unwrap();
        let nonempty: BTreeMap<_, _> = m
            .truth
            .impacts
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        assert_eq!(truth, nonempty);
    }
}
