//! Synthetic markets with known event impacts.
//!
//! Each month carries a random signed four-layer graph that evolves by
//! edge churn. Events hit one or two seed firms; their true impact is the
//! diffusion under the configured parameters, truncated to the `k` largest
//! firms per event and the `l` largest events per firm, and lands on the
//! next trading day's returns. Returns follow a one-factor market model
//! with Gaussian noise.
//!
//! Randomness comes from `ChaCha8Rng` seeded with the run seed, with one
//! stream per concern (graph, events, market, noise, betas, factors) and
//! one per month for graph churn, so changing one part of the generator
//! does not reshuffle the others.

pub mod io;

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{evaluate_shocks, AlignEnv, AlignError, RewardConfig, RewardReport};
use crate::asset_pricing::{FactorPanel, FactorRow, Loadings, ReturnPanel};
use crate::calendar::{trading_days, trading_days_before, Month};
use crate::market_graph::{
    EdgeRecord, FirmId, GraphError, GraphSeries, LayerWeights, RelationKind, Sign,
};
use crate::propagator::{
    aggregate_shocks, propagate_diffusion, DiffusionParams, Event, ShockVector,
};

pub use io::{read_truth, write_dataset, write_truth, TRUTH_HEADER};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Propagator(#[from] crate::propagator::PropagatorError),
    #[error("{0}")]
    Pricing(#[from] crate::asset_pricing::PricingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub firms: usize,
    pub events: usize,
    pub months: usize,
    /// First month carrying events, `YYYY-MM`.
    pub start: Month,
    /// Trading days of returns before the first month, for beta estimation.
    pub warmup_days: usize,
    /// Most firms impacted by one event.
    pub k: usize,
    /// Most events impacting one firm.
    pub l: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Mean and volatility of the daily market excess return.
    pub market_drift: f64,
    pub market_vol: f64,
    pub rf: f64,
    /// Volatility of the idiosyncratic return noise.
    pub sigma_nu: f64,
    /// Volatility of the non-market factors written to `factors.csv`.
    pub factor_vol: f64,
    /// Mean undirected degree per layer.
    pub degree: [f64; 4],
    /// Share of edges replaced each month.
    pub churn: f64,
    /// Probability that an edge is competitive.
    pub negative_edge_share: f64,
    /// Probability that an event names a second firm.
    pub second_seed_share: f64,
    /// Probability that an event is tagged negative.
    pub negative_event_share: f64,
    /// Parameters generating the true impacts.
    pub truth: DiffusionParams,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            firms: 100,
            events: 500,
            months: 24,
            start: Month::new(2021, 1).expect("valid month"),
            warmup_days: 80,
            k: 20,
            l: 500,
            beta_min: 0.5,
            beta_max: 1.5,
            market_drift: 0.0003,
            market_vol: 0.01,
            rf: 0.0001,
            sigma_nu: 0.005,
            factor_vol: 0.005,
            degree: [3.0, 2.0, 1.0, 2.0],
            churn: 0.1,
            negative_edge_share: 0.3,
            second_seed_share: 0.2,
            negative_event_share: 0.5,
            truth: DiffusionParams {
                gamma: LayerWeights {
                    technical: 0.3,
                    supply_chain: 0.8,
                    leadership: 0.5,
                    fund_holding: 0.2,
                },
                hops: 2,
                seed_scale: 0.05,
            },
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InfeasibleConfig(m));
        if self.firms < 2 || self.events == 0 || self.months == 0 {
            return bad("need at least 2 firms, 1 event and 1 month".into());
        }
        if self.k == 0 || self.k > self.firms {
            return bad(format!("k = {} outside 1..={}", self.k, self.firms));
        }
        if self.l == 0 || self.l > self.events {
            return bad(format!("l = {} outside 1..={}", self.l, self.events));
        }
        if self.firms * self.l < self.events {
            return bad(format!(
                "{} firms × l = {} cannot carry {} events",
                self.firms, self.l, self.events
            ));
        }
        if !(self.sigma_nu >= 0.0) || !(self.market_vol >= 0.0) || !(self.factor_vol >= 0.0) {
            return bad("volatilities must be non-negative".into());
        }
        if !(self.beta_min <= self.beta_max) {
            return bad("beta_min > beta_max".into());
        }
        for p in [
            self.churn,
            self.negative_edge_share,
            self.second_seed_share,
            self.negative_event_share,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.degree.iter().any(|d| !(*d >= 0.0)) {
            return bad("negative degree".into());
        }
        self.truth
            .validate()
            .map_err(|e| SynthError::InfeasibleConfig(e.to_string()))?;
        let days = self.event_days().len();
        if days < self.events {
            return bad(format!(
                "{} events need distinct trading days but only {days} are available",
                self.events
            ));
        }
        Ok(())
    }

    fn end_month(&self) -> Month {
        (1..self.months).fold(self.start, |m, _| m.succ())
    }

    /// Trading days eligible for events: every day of the event months
    /// except the last, which has no following return.
    fn event_days(&self) -> Vec<NaiveDate> {
        let last = self
            .end_month()
            .succ()
            .first_day()
            .pred_opt()
            .expect("valid date");
        let mut days = trading_days(self.start.first_day(), last);
        days.pop();
        days
    }
}

/// The true impact matrix `f(c_j, e)` and the market model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// Nonzero impacts by event id.
    pub impacts: BTreeMap<String, BTreeMap<FirmId, f64>>,
    /// Date on which each event's impact is realized.
    pub impact_dates: BTreeMap<String, NaiveDate>,
    pub theta: DiffusionParams,
    pub betas: BTreeMap<FirmId, f64>,
}

impl GroundTruth {
    pub fn shocks_by_event(&self) -> BTreeMap<String, ShockVector> {
        self.impacts
            .iter()
            .map(|(id, m)| (id.clone(), ShockVector::from_map(m.clone())))
            .collect()
    }

    pub fn loadings(&self) -> BTreeMap<FirmId, Loadings> {
        self.betas
            .iter()
            .map(|(f, b)| (f.clone(), Loadings::capm(*b)))
            .collect()
    }

    /// Largest support of any event and of any firm.
    pub fn sparsity(&self) -> (usize, usize) {
        let per_event = self.impacts.values().map(BTreeMap::len).max().unwrap_or(0);
        let mut per_firm: BTreeMap<&FirmId, usize> = BTreeMap::new();
        for m in self.impacts.values() {
            for f in m.keys() {
                *per_firm.entry(f).or_insert(0) += 1;
            }
        }
        (per_event, per_firm.values().copied().max().unwrap_or(0))
    }
}

#[derive(Debug, Clone)]
pub struct SynthMarket {
    pub config: SynthConfig,
    pub edges: Vec<EdgeRecord>,
    pub series: GraphSeries,
    pub events: Vec<Event>,
    pub returns: ReturnPanel,
    pub factors: FactorPanel,
    pub truth: GroundTruth,
}

const STREAM_GRAPH: u64 = 1;
const STREAM_EVENTS: u64 = 2;
const STREAM_MARKET: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_BETAS: u64 = 5;
const STREAM_FACTORS: u64 = 6;
const STREAM_MONTH_BASE: u64 = 1000;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn firm_ids(n: usize) -> Vec<FirmId> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n)
        .map(|i| FirmId::new(format!("F{i:0width$}")).expect("non-empty ticker"))
        .collect()
}

type EdgeKey = (usize, usize, RelationKind);

fn random_edge(
    rng: &mut ChaCha8Rng,
    n: usize,
    kind: RelationKind,
    neg: f64,
) -> (EdgeKey, f64, Sign) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (a, b) = if kind.is_directed() {
        (a, b)
    } else {
        (a.min(b), a.max(b))
    };
    let weight = match kind {
        RelationKind::Technical => rng.random_range(0.1..1.0),
        RelationKind::SupplyChain => rng.random_range(1.0..100.0),
        RelationKind::Leadership => rng.random_range(1..=3) as f64,
        RelationKind::FundHolding => rng.random_range(1..=10) as f64,
    };
    let sign = if rng.random_bool(neg) {
        Sign::Negative
    } else {
        Sign::Positive
    };
    ((a, b, kind), weight, sign)
}

/// Base graph, then per-month churn; every firm keeps at least one edge so
/// that every snapshot covers the whole universe.
fn generate_edges(cfg: &SynthConfig, firms: &[FirmId], months: &[Month]) -> Vec<EdgeRecord> {
    let n = firms.len();
    let mut rng = stream(cfg.seed, STREAM_GRAPH);
    let mut edges: BTreeMap<EdgeKey, (f64, Sign)> = BTreeMap::new();
    let targets: Vec<usize> = cfg
        .degree
        .iter()
        .map(|d| (d * n as f64 / 2.0).round() as usize)
        .collect();
    for kind in RelationKind::ALL {
        let max_pairs = if kind.is_directed() {
            n * (n - 1)
        } else {
            n * (n - 1) / 2
        };
        let target = targets[kind.index()].min(max_pairs);
        let mut placed = 0;
        while placed < target {
            let (key, w, s) = random_edge(&mut rng, n, kind, cfg.negative_edge_share);
            if edges.insert(key, (w, s)).is_none() {
                placed += 1;
            }
        }
    }
    let mut out = Vec::new();
    for (mi, month) in months.iter().enumerate() {
        let mut rng = stream(cfg.seed, STREAM_MONTH_BASE + mi as u64);
        if mi > 0 {
            let keys: Vec<EdgeKey> = edges.keys().copied().collect();
            for key in keys {
                if rng.random_bool(cfg.churn) {
                    edges.remove(&key);
                    loop {
                        let (k2, w, s) = random_edge(&mut rng, n, key.2, cfg.negative_edge_share);
                        if let Entry::Vacant(slot) = edges.entry(k2) {
                            slot.insert((w, s));
                            break;
                        }
                    }
                }
            }
        }
        let mut covered = vec![false; n];
        for (a, b, _) in edges.keys() {
            covered[*a] = true;
            covered[*b] = true;
        }
        let mut month_edges = edges.clone();
        for i in (0..n).filter(|i| !covered[*i]) {
            let j = if i + 1 < n { i + 1 } else { 0 };
            month_edges.insert(
                (i.min(j), i.max(j), RelationKind::Technical),
                (0.1, Sign::Positive),
            );
        }
        for ((a, b, kind), (w, s)) in month_edges {
            out.push(EdgeRecord {
                month: *month,
                src: firms[a].clone(),
                dst: firms[b].clone(),
                kind,
                weight: w,
                sign: s,
            });
        }
    }
    out
}

fn generate_events(cfg: &SynthConfig, firms: &[FirmId]) -> Vec<Event> {
    let mut rng = stream(cfg.seed, STREAM_EVENTS);
    let days = cfg.event_days();
    let mut picked: Vec<NaiveDate> = days
        .choose_multiple(&mut rng, cfg.events)
        .copied()
        .collect();
    picked.sort();
    let width = cfg.events.to_string().len().max(4);
    picked
        .into_iter()
        .enumerate()
        .map(|(i, day)| {
            let count = if rng.random_bool(cfg.second_seed_share) {
                2
            } else {
                1
            };
            let mut codes: Vec<FirmId> = firms.choose_multiple(&mut rng, count).cloned().collect();
            codes.sort();
            let negative = rng.random_bool(cfg.negative_event_share);
            let action = if negative { "negative" } else { "positive" };
            let names: Vec<&str> = codes.iter().map(FirmId::as_str).collect();
            Event {
                id: format!("E{i:0width$}"),
                datetime: day.and_hms_opt(9, 30, 0).expect("valid time"),
                title: format!("{} news for {}", action, names.join(" and ")),
                body: format!(
                    "Synthetic {action} development affecting {}.",
                    names.join(", ")
                ),
                company_codes: codes,
                action: Some(action.to_string()),
            }
        })
        .collect()
}

/// Keeps the `k` largest-magnitude impacts per event, then the `l` largest
/// per firm. Ties go to the earlier firm or event.
fn truncate(
    raw: BTreeMap<String, Vec<(FirmId, f64)>>,
    k: usize,
    l: usize,
) -> BTreeMap<String, BTreeMap<FirmId, f64>> {
    let mut per_event: BTreeMap<String, Vec<(FirmId, f64)>> = BTreeMap::new();
    for (id, mut v) in raw {
        v.retain(|(_, x)| *x != 0.0);
        v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
        v.truncate(k);
        per_event.insert(id, v);
    }
    let mut per_firm: BTreeMap<FirmId, Vec<(String, f64)>> = BTreeMap::new();
    for (id, v) in &per_event {
        for (f, x) in v {
            per_firm
                .entry(f.clone())
                .or_default()
                .push((id.clone(), *x));
        }
    }
    let mut out: BTreeMap<String, BTreeMap<FirmId, f64>> = per_event
        .keys()
        .map(|id| (id.clone(), BTreeMap::new()))
        .collect();
    for (f, mut v) in per_firm {
        v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
        v.truncate(l);
        for (id, x) in v {
            out.get_mut(&id).expect("known event").insert(f.clone(), x);
        }
    }
    out
}

/// Generates a full synthetic market.
pub fn generate(cfg: &SynthConfig) -> Result<SynthMarket, SynthError> {
    cfg.validate()?;
    let firms = firm_ids(cfg.firms);
    let months: Vec<Month> = std::iter::successors(Some(cfg.start), |m| Some(m.succ()))
        .take(cfg.months)
        .collect();
    let edges = generate_edges(cfg, &firms, &months);
    let series = GraphSeries::from_records(&edges, None, &LayerWeights::uniform(1.0))?;
    let events = generate_events(cfg, &firms);

    let first = cfg.start.first_day();
    let last = cfg
        .end_month()
        .succ()
        .first_day()
        .pred_opt()
        .expect("valid date");
    let mut dates = trading_days_before(first, cfg.warmup_days);
    dates.extend(trading_days(first, last));

    let mut raw: BTreeMap<String, Vec<(FirmId, f64)>> = BTreeMap::new();
    let mut impact_dates = BTreeMap::new();
    for e in &events {
        let snapshot = series
            .get(Month::of(e.date()))
            .expect("every event month has a snapshot");
        let p = propagate_diffusion(snapshot, e, &cfg.truth)?;
        let z = aggregate_shocks(snapshot, &p);
        raw.insert(
            e.id.clone(),
            z.iter().map(|(f, v)| (f.clone(), v)).collect(),
        );
        let idx = dates.partition_point(|d| *d <= e.date());
        impact_dates.insert(e.id.clone(), dates[idx]);
    }
    let impacts = truncate(raw, cfg.k, cfg.l);

    let mut brng = stream(cfg.seed, STREAM_BETAS);
    let betas: BTreeMap<FirmId, f64> = firms
        .iter()
        .map(|f| (f.clone(), brng.random_range(cfg.beta_min..=cfg.beta_max)))
        .collect();

    let mut mrng = stream(cfg.seed, STREAM_MARKET);
    let mut frng = stream(cfg.seed, STREAM_FACTORS);
    let mkt = Normal::new(cfg.market_drift, cfg.market_vol).expect("finite market parameters");
    let fac = Normal::new(0.0, cfg.factor_vol).expect("finite factor volatility");
    let mut factors = FactorPanel::new();
    for d in &dates {
        let row = FactorRow {
            mkt_rf: mkt.sample(&mut mrng),
            smb: Some(fac.sample(&mut frng)),
            hml: Some(fac.sample(&mut frng)),
            rmw: Some(fac.sample(&mut frng)),
            cma: Some(fac.sample(&mut frng)),
            rf: cfg.rf,
        };
        factors.push(*d, row)?;
    }

    let mut by_date: BTreeMap<NaiveDate, BTreeMap<&FirmId, f64>> = BTreeMap::new();
    for (id, m) in &impacts {
        let d = impact_dates[id];
        for (f, x) in m {
            *by_date.entry(d).or_default().entry(f).or_insert(0.0) += x;
        }
    }
    let mut nrng = stream(cfg.seed, STREAM_NOISE);
    let noise = Normal::new(0.0, cfg.sigma_nu).expect("finite noise volatility");
    let mut returns = ReturnPanel::new();
    for d in &dates {
        let row = factors.get(*d).expect("factor row per date");
        let shocks = by_date.get(d);
        for f in &firms {
            let impact = shocks.and_then(|s| s.get(f)).copied().unwrap_or(0.0);
            let r = row.rf + betas[f] * row.mkt_rf + impact + noise.sample(&mut nrng);
            returns.insert(f.clone(), *d, r)?;
        }
    }

    Ok(SynthMarket {
        config: cfg.clone(),
        edges,
        series,
        events,
        returns,
        factors,
        truth: GroundTruth {
            impacts,
            impact_dates,
            theta: cfg.truth,
            betas,
        },
    })
}

/// Mean reward of the true shocks against realized residuals over the
/// events of `months`.
pub fn oracle_reward(
    truth: &GroundTruth,
    env: &AlignEnv<'_>,
    months: &[Month],
    cfg: &RewardConfig,
) -> Result<RewardReport, AlignError> {
    evaluate_shocks(env, months, &truth.shocks_by_event(), cfg)
}

/// All months that carry events.
pub fn event_months(events: &[Event]) -> Vec<Month> {
    events
        .iter()
        .map(|e| Month::of(e.date()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
