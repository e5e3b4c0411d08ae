//! Event-impact propagators and shock aggregation.
//!
//! A propagator maps an event plus the month's graph to a [`PredictionSet`]:
//! per-firm impact claims and a sparse source→target channel matrix `Y`.
//! [`aggregate_shocks`] folds `Y` through the interaction measure into a
//! [`ShockVector`] `Z`. Three propagators are provided: the parametric
//! signed diffusion, an external process speaking the line protocol, and a
//! null propagator whose seeds ignore the event.

mod diffusion;
pub mod external;
pub mod io;
pub mod mock;
mod prediction;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::calendar::Month;
use crate::market_graph::{FirmId, GraphSeries, GraphSnapshot, LayerWeights};

pub use diffusion::{
    aggregate_shocks, propagate_diffusion, propagate_with_score, DEFAULT_SEED_SCORE,
};
pub use external::{run_external, trim_context, ExternalClient, DEFAULT_EDGE_BUDGET};
pub use prediction::{
    parse_prediction, ImpactClaim, ImpactType, Outcome, PredictionSet, Refusal, RefusalReason,
};

#[derive(Debug, Error)]
pub enum PropagatorError {
    #[error("event {0}: no seed firm is present in the snapshot")]
    NoSeedInGraph(String),
    #[error("invalid diffusion parameters: {0}")]
    BadParams(String),
    #[error("external client is dead: {0}")]
    ClientDead(String),
    #[error("cannot start external client: {0}")]
    Spawn(String),
    #[error("invalid event: {0}")]
    BadEvent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A dated news item about one or more firms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    #[serde(serialize_with = "ser_datetime", deserialize_with = "de_datetime")]
    pub datetime: NaiveDateTime,
    pub company_codes: Vec<FirmId>,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

const DATETIME_FMT: &str = "%Y-%m-%dT%H:%M:%S";

fn ser_datetime<S: Serializer>(dt: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&dt.format(DATETIME_FMT).to_string())
}

fn de_datetime<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
    let raw = String::deserialize(d)?;
    parse_datetime(&raw).map_err(serde::de::Error::custom)
}

/// Accepts `YYYY-MM-DDTHH:MM:SS`, the same with a space, or a bare date.
pub fn parse_datetime(raw: &str) -> Result<NaiveDateTime, PropagatorError> {
    let raw = raw.trim();
    for fmt in [DATETIME_FMT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
        .map_err(|_| PropagatorError::BadEvent(format!("unparseable datetime `{raw}`")))
}

impl Event {
    pub fn date(&self) -> NaiveDate {
        self.datetime.date()
    }

    /// −1 when the event is tagged with a negative action, otherwise +1.
    pub fn polarity(&self) -> f64 {
        match self.action.as_deref().map(str::trim) {
            Some(a) if a.eq_ignore_ascii_case("negative") => -1.0,
            _ => 1.0,
        }
    }

    pub fn datetime_string(&self) -> String {
        self.datetime.format(DATETIME_FMT).to_string()
    }
}

/// Parameters of the signed diffusion propagator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionParams {
    /// Per-layer decay `γ_k ∈ [0, 1]`.
    pub gamma: LayerWeights,
    /// Hop limit `H ∈ 0..=4`.
    pub hops: usize,
    /// Seed scale `s0 ∈ (0, 1]`.
    pub seed_scale: f64,
}

pub const MAX_HOPS: usize = 4;

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            gamma: LayerWeights::uniform(0.5),
            hops: 2,
            seed_scale: 1.0,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<(), PropagatorError> {
        for g in self.gamma.as_array() {
            if !(0.0..=1.0).contains(&g) {
                return Err(PropagatorError::BadParams(format!(
                    "decay {g} outside [0, 1]"
                )));
            }
        }
        if self.hops > MAX_HOPS {
            return Err(PropagatorError::BadParams(format!(
                "hop limit {} above {MAX_HOPS}",
                self.hops
            )));
        }
        if !(self.seed_scale > 0.0 && self.seed_scale <= 1.0) {
            return Err(PropagatorError::BadParams(format!(
                "seed scale {} outside (0, 1]",
                self.seed_scale
            )));
        }
        Ok(())
    }
}

/// Aggregated shock magnitudes `Z_j`. Firms absent from the map are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShockVector {
    values: BTreeMap<FirmId, f64>,
    unresolved: BTreeSet<FirmId>,
}

impl ShockVector {
    pub fn from_map(values: BTreeMap<FirmId, f64>) -> Self {
        Self {
            values,
            unresolved: BTreeSet::new(),
        }
    }

    pub fn get(&self, firm: &FirmId) -> f64 {
        self.values.get(firm).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FirmId, f64)> {
        self.values.iter().map(|(f, v)| (f, *v))
    }

    /// Firms named in the prediction but absent from the snapshot.
    pub fn unresolved(&self) -> &BTreeSet<FirmId> {
        &self.unresolved
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Firms with a nonzero shock.
    pub fn support(&self) -> BTreeSet<FirmId> {
        self.values
            .iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(f, _)| f.clone())
            .collect()
    }

    /// Adds `other` into `self` entry-wise.
    pub fn accumulate(&mut self, other: &ShockVector) {
        for (f, v) in &other.values {
            *self.values.entry(f.clone()).or_insert(0.0) += v;
        }
        self.unresolved.extend(other.unresolved.iter().cloned());
    }
}

/// Anything that turns an event into a prediction or a refusal.
pub trait Propagator {
    fn name(&self) -> String;
    fn predict(
        &mut self,
        snapshot: &GraphSnapshot,
        event: &Event,
    ) -> Result<Outcome, PropagatorError>;
}

/// The built-in diffusion propagator with fixed parameters.
#[derive(Debug, Clone)]
pub struct DiffusionPropagator {
    pub params: DiffusionParams,
    pub seed_score: i32,
}

impl DiffusionPropagator {
    pub fn new(params: DiffusionParams) -> Self {
        Self {
            params,
            seed_score: DEFAULT_SEED_SCORE,
        }
    }
}

impl Propagator for DiffusionPropagator {
    fn name(&self) -> String {
        "diffusion".into()
    }

    fn predict(
        &mut self,
        snapshot: &GraphSnapshot,
        event: &Event,
    ) -> Result<Outcome, PropagatorError> {
        match propagate_with_score(snapshot, event, &self.params, self.seed_score) {
            Ok(p) => Ok(Outcome::Prediction(p)),
            Err(PropagatorError::NoSeedInGraph(id)) => Ok(Outcome::Refusal(Refusal::new(
                Some(id),
                RefusalReason::NoSeed,
                "no seed firm in snapshot",
            ))),
            Err(e) => Err(e),
        }
    }
}

/// Diffusion from seeds drawn uniformly from the snapshot, ignoring the
/// event's firms: a graph-shaped prediction with no information.
#[derive(Debug, Clone)]
pub struct NullPropagator {
    params: DiffusionParams,
    rng: ChaCha8Rng,
}

impl NullPropagator {
    pub fn new(params: DiffusionParams, seed: u64) -> Self {
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Propagator for NullPropagator {
    fn name(&self) -> String {
        "null".into()
    }

    fn predict(
        &mut self,
        snapshot: &GraphSnapshot,
        event: &Event,
    ) -> Result<Outcome, PropagatorError> {
        if snapshot.is_empty() {
            return Ok(Outcome::Refusal(Refusal::new(
                Some(event.id.clone()),
                RefusalReason::NoSeed,
                "empty snapshot",
            )));
        }
        let count = event.company_codes.len().clamp(1, snapshot.len());
        let seeds: Vec<FirmId> = snapshot
            .firms()
            .choose_multiple(&mut self.rng, count)
            .cloned()
            .collect();
        let mut shuffled = event.clone();
        shuffled.company_codes = seeds;
        if rand::Rng::random_bool(&mut self.rng, 0.5) {
            shuffled.action = Some("negative".into());
        } else {
            shuffled.action = Some("positive".into());
        }
        let mut p = propagate_diffusion(snapshot, &shuffled, &self.params)?;
        p.event_id = event.id.clone();
        Ok(Outcome::Prediction(p))
    }
}

/// Shocks from running a propagator over an event stream.
#[derive(Debug, Clone, Default)]
pub struct ShockLog {
    /// Per event id.
    pub by_event: BTreeMap<String, ShockVector>,
    /// Summed over the events of each event date.
    pub by_date: BTreeMap<NaiveDate, ShockVector>,
    /// `(event id, refusal reason)`; `None` for a valid prediction.
    pub outcomes: Vec<(String, Option<RefusalReason>)>,
    /// Events skipped because their month has no snapshot.
    pub skipped: usize,
}

/// Runs `prop` over `events` in ascending id order and aggregates shocks.
pub fn collect_shocks(
    prop: &mut dyn Propagator,
    series: &GraphSeries,
    events: &[Event],
) -> Result<ShockLog, PropagatorError> {
    let mut order: Vec<&Event> = events.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut log = ShockLog::default();
    for e in order {
        let Some(s) = series.get(Month::of(e.date())) else {
            log::debug!("event {}: no snapshot for its month", e.id);
            log.skipped += 1;
            continue;
        };
        match prop.predict(s, e)? {
            Outcome::Prediction(p) => {
                let z = aggregate_shocks(s, &p);
                log.by_date.entry(e.date()).or_default().accumulate(&z);
                log.by_event.insert(e.id.clone(), z);
                log.outcomes.push((e.id.clone(), None));
            }
            Outcome::Refusal(r) => log.outcomes.push((e.id.clone(), Some(r.reason))),
        }
    }
    Ok(log)
}

impl fmt::Display for DiffusionParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.gamma.as_array();
        write!(
            f,
            "gamma=({:.4},{:.4},{:.4},{:.4}) hops={} s0={:.4}",
            g[0], g[1], g[2], g[3], self.hops, self.seed_scale
        )
    }
}
