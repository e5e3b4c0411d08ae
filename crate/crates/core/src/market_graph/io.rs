//! `edges.csv` / `cpc.csv` ingestion and per-month snapshot export.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{CpcProfile, EdgeRecord, FirmId, GraphError, GraphSnapshot, RelationKind, Sign};
use crate::calendar::Month;

pub const EDGES_HEADER: [&str; 6] = ["month", "src", "dst", "relation", "weight", "sign"];

#[derive(Debug, Deserialize)]
struct EdgeRow {
    month: String,
    src: String,
    dst: String,
    relation: String,
    weight: f64,
    #[serde(default)]
    sign: Option<i64>,
}

pub fn read_edges<R: Read>(reader: R) -> Result<Vec<EdgeRecord>, GraphError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<EdgeRow>().enumerate() {
        let row = row?;
        let month: Month = row
            .month
            .parse()
            .map_err(|e| GraphError::BadRecord(format!("row {}: {e}", line + 1)))?;
        let kind: RelationKind = row.relation.parse()?;
        let sign = match row.sign {
            None => Sign::Positive,
            Some(v) => Sign::from_i64(v).ok_or_else(|| {
                GraphError::BadRecord(format!("row {}: sign must be -1 or 1, got {v}", line + 1))
            })?,
        };
        out.push(EdgeRecord::new(
            month, &row.src, &row.dst, kind, row.weight, sign,
        )?);
    }
    Ok(out)
}

pub fn read_edges_file(path: &Path) -> Result<Vec<EdgeRecord>, GraphError> {
    read_edges(fs::File::open(path)?)
}

pub fn write_edges<W: Write>(writer: W, records: &[EdgeRecord]) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EDGES_HEADER)?;
    for r in records {
        w.write_record([
            r.month.to_string(),
            r.src.to_string(),
            r.dst.to_string(),
            r.kind.as_str().to_string(),
            r.weight.to_string(),
            r.sign.as_i8().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CpcRow {
    ticker: String,
    cpc: String,
    count: u64,
}

pub fn read_cpc<R: Read>(reader: R) -> Result<Vec<CpcProfile>, GraphError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut by_firm: BTreeMap<FirmId, Vec<(String, u64)>> = BTreeMap::new();
    for row in rdr.deserialize::<CpcRow>() {
        let row = row?;
        by_firm
            .entry(FirmId::new(row.ticker)?)
            .or_default()
            .push((row.cpc.trim().to_string(), row.count));
    }
    by_firm
        .into_iter()
        .map(|(firm, counts)| CpcProfile::new(firm, counts))
        .collect()
}

pub fn read_cpc_file(path: &Path) -> Result<Vec<CpcProfile>, GraphError> {
    read_cpc(fs::File::open(path)?)
}

pub fn write_cpc<W: Write>(writer: W, profiles: &[CpcProfile]) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ticker", "cpc", "count"])?;
    for p in profiles {
        for (code, n) in &p.counts {
            w.write_record([p.firm.as_str(), code.as_str(), &n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a snapshot as `edges.csv` rows sorted by `(src, dst, relation)`.
pub fn write_snapshot<W: Write>(writer: W, snapshot: &GraphSnapshot) -> Result<(), GraphError> {
    write_edges(writer, &snapshot.to_records())
}

/// Exports one `<YYYY-MM>.csv` file per snapshot into `dir`.
pub fn export_snapshots<'a, I>(dir: &Path, snapshots: I) -> Result<Vec<PathBuf>, GraphError>
where
    I: IntoIterator<Item = &'a GraphSnapshot>,
{
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for s in snapshots {
        let path = dir.join(format!("{}.csv", s.month()));
        write_snapshot(fs::File::create(&path)?, s)?;
        paths.push(path);
    }
    Ok(paths)
}
