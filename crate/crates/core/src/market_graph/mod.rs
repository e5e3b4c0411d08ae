//! Monthly signed multi-relation firm graphs.
//!
//! Each [`GraphSnapshot`] holds four relation layers (technical closeness,
//! supply chain, shared leadership, mutual-fund co-holding). Every layer is
//! normalized by its month-max weight and the layers are combined into a
//! single signed interaction measure `mu(i, j)` with configurable
//! [`LayerWeights`]. Supply-chain edges are directed; the other three layers
//! are symmetric.

mod closeness;
pub mod io;
mod snapshot;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::Month;

pub use closeness::{technical_closeness, technical_edges_from_cpc, CpcProfile};
pub use snapshot::{Channel, GraphSeries, GraphSnapshot};
pub use stats::{snapshot_stats, SeriesStats};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("records span several months ({0} and {1})")]
    MixedMonth(Month, Month),
    #[error("bad layer configuration: {0}")]
    BadConfig(String),
    #[error("unknown firm `{0}`")]
    UnknownFirm(FirmId),
    #[error("CPC profile for `{0}` has zero variance over the shared vocabulary")]
    DegenerateProfile(FirmId),
    #[error("graph series is empty")]
    EmptySeries,
    #[error("self edge on `{0}`")]
    SelfEdge(FirmId),
    #[error("negative edge weight {weight} on {src}->{dst}")]
    NegativeWeight {
        src: FirmId,
        dst: FirmId,
        weight: f64,
    },
    #[error("duplicate snapshot for month {0}")]
    DuplicateMonth(Month),
    #[error("invalid record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Ticker of a public firm.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FirmId(String);

impl FirmId {
    pub fn new(ticker: impl Into<String>) -> Result<Self, GraphError> {
        let ticker = ticker.into();
        let trimmed = ticker.trim();
        if trimmed.is_empty() || trimmed.contains(['\n', '\r']) {
            return Err(GraphError::BadRecord(format!("invalid ticker `{ticker}`")));
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for FirmId {
    type Error = GraphError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        FirmId::new(s)
    }
}

impl From<FirmId> for String {
    fn from(f: FirmId) -> String {
        f.0
    }
}

impl fmt::Display for FirmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for FirmId {
    type Err = GraphError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FirmId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Technical,
    SupplyChain,
    Leadership,
    FundHolding,
}

impl RelationKind {
    pub const ALL: [RelationKind; 4] = [
        RelationKind::Technical,
        RelationKind::SupplyChain,
        RelationKind::Leadership,
        RelationKind::FundHolding,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelationKind::Technical => "technical",
            RelationKind::SupplyChain => "supply_chain",
            RelationKind::Leadership => "leadership",
            RelationKind::FundHolding => "fund_holding",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            RelationKind::Technical => 0,
            RelationKind::SupplyChain => 1,
            RelationKind::Leadership => 2,
            RelationKind::FundHolding => 3,
        }
    }

    /// Only supply-chain relations carry a direction.
    pub fn is_directed(&self) -> bool {
        matches!(self, RelationKind::SupplyChain)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = GraphError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "technical" => Ok(RelationKind::Technical),
            "supply_chain" => Ok(RelationKind::SupplyChain),
            "leadership" => Ok(RelationKind::Leadership),
            "fund_holding" => Ok(RelationKind::FundHolding),
            other => Err(GraphError::BadRecord(format!("unknown relation `{other}`"))),
        }
    }
}

/// Polarity of a relation: cooperation (+1) or competition (−1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Sign {
    Negative,
    #[default]
    Positive,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Sign::Negative => -1.0,
            Sign::Positive => 1.0,
        }
    }

    pub fn as_i8(&self) -> i8 {
        match self {
            Sign::Negative => -1,
            Sign::Positive => 1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Sign> {
        match v {
            -1 => Some(Sign::Negative),
            1 => Some(Sign::Positive),
            _ => None,
        }
    }
}

/// One row of `edges.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub month: Month,
    pub src: FirmId,
    pub dst: FirmId,
    pub kind: RelationKind,
    /// Relation-specific magnitude: closeness score, transaction value,
    /// shared-director count or shared-fund count.
    pub weight: f64,
    pub sign: Sign,
}

impl EdgeRecord {
    pub fn new(
        month: Month,
        src: &str,
        dst: &str,
        kind: RelationKind,
        weight: f64,
        sign: Sign,
    ) -> Result<Self, GraphError> {
        let rec = Self {
            month,
            src: FirmId::new(src)?,
            dst: FirmId::new(dst)?,
            kind,
            weight,
            sign,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.src == self.dst {
            return Err(GraphError::SelfEdge(self.src.clone()));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(GraphError::NegativeWeight {
                src: self.src.clone(),
                dst: self.dst.clone(),
                weight: self.weight,
            });
        }
        Ok(())
    }
}

/// Per-layer combination weights applied after month-max normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerWeights {
    pub technical: f64,
    pub supply_chain: f64,
    pub leadership: f64,
    pub fund_holding: f64,
}

impl Default for LayerWeights {
    fn default() -> Self {
        Self::uniform(0.25)
    }
}

impl LayerWeights {
    pub fn uniform(w: f64) -> Self {
        Self {
            technical: w,
            supply_chain: w,
            leadership: w,
            fund_holding: w,
        }
    }

    pub fn get(&self, kind: RelationKind) -> f64 {
        match kind {
            RelationKind::Technical => self.technical,
            RelationKind::SupplyChain => self.supply_chain,
            RelationKind::Leadership => self.leadership,
            RelationKind::FundHolding => self.fund_holding,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.technical,
            self.supply_chain,
            self.leadership,
            self.fund_holding,
        ]
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        for kind in RelationKind::ALL {
            let w = self.get(kind);
            if !(w >= 0.0) || !w.is_finite() {
                return Err(GraphError::BadConfig(format!(
                    "layer weight for {kind} must be a finite non-negative number, got {w}"
                )));
            }
        }
        Ok(())
    }
}
