use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{decode, PolicyState, Sample, PARAM_DIM, PARAM_NAMES};
use super::{mean_report, reward, AlignError, RewardConfig, RewardReport};
use crate::asset_pricing::ResidualPanel;
use crate::calendar::Month;
use crate::market_graph::{FirmId, GraphSeries, GraphSnapshot};
use crate::propagator::{
    aggregate_shocks, propagate_with_score, DiffusionParams, Event, PropagatorError, ShockVector,
    DEFAULT_SEED_SCORE,
};

/// Everything the loop reads: monthly graphs, events, and residuals.
#[derive(Debug, Clone, Copy)]
pub struct AlignEnv<'a> {
    pub series: &'a GraphSeries,
    pub events: &'a [Event],
    pub residuals: &'a ResidualPanel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub reward: RewardConfig,
    pub init: DiffusionParams,
    /// Exploration standard deviation per policy coordinate.
    pub sigma: [f64; PARAM_DIM],
    pub alpha: f64,
    pub clip: f64,
    /// Baseline EMA decay.
    pub rho: f64,
    pub max_updates: usize,
    /// Gradient passes over each month's samples; passes after the first
    /// see importance ratios different from 1.
    pub epochs: usize,
    /// Trailing event months withheld from training.
    pub holdout_months: usize,
    pub seed_score: i32,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            reward: RewardConfig::default(),
            init: DiffusionParams::default(),
            sigma: [0.1, 0.1, 0.1, 0.1, 0.5, 0.1],
            alpha: 0.05,
            clip: 0.2,
            rho: 0.1,
            max_updates: 200,
            epochs: 1,
            holdout_months: 0,
            seed_score: DEFAULT_SEED_SCORE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub month: Month,
    /// Mean reward of the step's samples.
    pub reward: f64,
    pub advantage: f64,
    /// Baseline after the step.
    pub baseline: f64,
    /// Policy mean that generated the samples.
    pub theta: [f64; PARAM_DIM],
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrace {
    pub steps: Vec<TraceStep>,
    pub final_theta: [f64; PARAM_DIM],
    pub final_params: DiffusionParams,
    pub train_months: Vec<Month>,
    pub holdout_months: Vec<Month>,
}

/// An event ready for scoring: its graph and the next residual date.
struct Scored<'a> {
    event: &'a Event,
    snapshot: &'a GraphSnapshot,
    eps: &'a BTreeMap<FirmId, f64>,
}

/// Events grouped by month, each sorted by id; events without a snapshot
/// or a later residual date are dropped with a log line.
fn batches<'a>(env: &AlignEnv<'a>) -> BTreeMap<Month, Vec<Scored<'a>>> {
    let mut out: BTreeMap<Month, Vec<Scored<'a>>> = BTreeMap::new();
    for e in env.events {
        let month = Month::of(e.date());
        let Some(snapshot) = env.series.get(month) else {
            log::debug!("event {}: no snapshot for {month}", e.id);
            continue;
        };
        let Some(eps) = next_cross_section(env.residuals, e.date()) else {
            log::debug!("event {}: no residuals after {}", e.id, e.date());
            continue;
        };
        out.entry(month).or_default().push(Scored {
            event: e,
            snapshot,
            eps,
        });
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.event.id.cmp(&b.event.id));
    }
    out
}

fn next_cross_section(panel: &ResidualPanel, date: NaiveDate) -> Option<&BTreeMap<FirmId, f64>> {
    panel.cross_section(panel.next_date_after(date)?)
}

/// Months with usable events, split into training and held-out parts.
pub fn split_months(env: &AlignEnv<'_>, holdout: usize) -> (Vec<Month>, Vec<Month>) {
    let months: Vec<Month> = batches(env).into_keys().collect();
    let cut = months.len().saturating_sub(holdout);
    (months[..cut].to_vec(), months[cut..].to_vec())
}

enum EventScore {
    Scored(RewardReport),
    Refused,
    Excluded,
}

fn score_event(
    item: &Scored<'_>,
    params: &DiffusionParams,
    seed_score: i32,
    cfg: &RewardConfig,
) -> Result<EventScore, AlignError> {
    let pred = match propagate_with_score(item.snapshot, item.event, params, seed_score) {
        Ok(p) => p,
        Err(PropagatorError::NoSeedInGraph(_)) => return Ok(EventScore::Refused),
        Err(e) => return Err(e.into()),
    };
    let z = aggregate_shocks(item.snapshot, &pred);
    Ok(match reward(&z, item.eps, cfg) {
        Ok(r) => EventScore::Scored(r),
        Err(AlignError::ZeroVector) => EventScore::Excluded,
        Err(e) => return Err(e),
    })
}

/// Runs the policy-gradient loop: training months are cycled in order,
/// one policy update per month batch, until `max_updates` updates.
pub fn align(env: &AlignEnv<'_>, cfg: &AlignConfig) -> Result<AlignmentTrace, AlignError> {
    cfg.reward.validate()?;
    cfg.init
        .validate()
        .map_err(|e| AlignError::BadConfig(e.to_string()))?;
    if cfg.epochs == 0 {
        return Err(AlignError::BadConfig("epochs must be ≥ 1".into()));
    }
    let all = batches(env);
    let months: Vec<Month> = all.keys().copied().collect();
    let cut = months.len().saturating_sub(cfg.holdout_months);
    let (train, holdout) = (months[..cut].to_vec(), months[cut..].to_vec());
    if train.is_empty() {
        return Err(AlignError::EmptyStream);
    }
    let mut state = PolicyState::new(&cfg.init, cfg.sigma, cfg.alpha, cfg.clip, cfg.rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut steps = Vec::with_capacity(cfg.max_updates);
    for step in 0..cfg.max_updates {
        let month = train[step % train.len()];
        let behaviour = state.clone();
        let mut drawn: Vec<([f64; PARAM_DIM], f64, f64)> = Vec::new();
        for item in &all[&month] {
            let theta = behaviour.sample(&mut rng);
            if let EventScore::Scored(r) =
                score_event(item, &decode(&theta), cfg.seed_score, &cfg.reward)?
            {
                let adv = state.advantage(r.total);
                drawn.push((theta, r.total, adv));
            }
        }
        if drawn.is_empty() {
            log::warn!("step {step}: no scorable events in {month}");
        }
        for _ in 0..cfg.epochs {
            if drawn.is_empty() {
                break;
            }
            let batch: Vec<Sample> = drawn
                .iter()
                .map(|(theta, _, adv)| Sample {
                    theta: *theta,
                    log_ratio: state.log_density(theta) - behaviour.log_density(theta),
                    advantage: *adv,
                })
                .collect();
            if let Err(e) = state.update(&batch) {
                log::warn!("step {step}: {e}");
                break;
            }
        }
        let n = drawn.len().max(1) as f64;
        steps.push(TraceStep {
            step,
            month,
            reward: drawn.iter().map(|d| d.1).sum::<f64>() / n,
            advantage: drawn.iter().map(|d| d.2).sum::<f64>() / n,
            baseline: state.baseline.value.unwrap_or(0.0),
            theta: behaviour.mean,
            events: drawn.len(),
        });
    }
    Ok(AlignmentTrace {
        steps,
        final_theta: state.mean,
        final_params: state.mean_params(),
        train_months: train,
        holdout_months: holdout,
    })
}

/// Mean reward of fixed parameters over the events of `months`.
pub fn evaluate_params(
    env: &AlignEnv<'_>,
    months: &[Month],
    params: &DiffusionParams,
    seed_score: i32,
    cfg: &RewardConfig,
) -> Result<RewardReport, AlignError> {
    let all = batches(env);
    let (mut reports, mut refused, mut excluded) = (Vec::new(), 0, 0);
    for m in months {
        for item in all.get(m).into_iter().flatten() {
            match score_event(item, params, seed_score, cfg)? {
                EventScore::Scored(r) => reports.push(r),
                EventScore::Refused => refused += 1,
                EventScore::Excluded => excluded += 1,
            }
        }
    }
    Ok(mean_report(&reports, refused, excluded))
}

/// Mean reward of given shock vectors (by event id) over `months`.
pub fn evaluate_shocks(
    env: &AlignEnv<'_>,
    months: &[Month],
    shocks: &BTreeMap<String, ShockVector>,
    cfg: &RewardConfig,
) -> Result<RewardReport, AlignError> {
    let all = batches(env);
    let (mut reports, mut refused, mut excluded) = (Vec::new(), 0, 0);
    for m in months {
        for item in all.get(m).into_iter().flatten() {
            let Some(z) = shocks.get(&item.event.id) else {
                refused += 1;
                continue;
            };
            match reward(z, item.eps, cfg) {
                Ok(r) => reports.push(r),
                Err(AlignError::ZeroVector) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(mean_report(&reports, refused, excluded))
}

/// Trace as CSV: `step,reward,advantage,baseline,<θ coordinates>,month,events`.
pub fn write_trace<W: Write>(writer: W, trace: &AlignmentTrace) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["step", "reward", "advantage", "baseline"];
    header.extend(PARAM_NAMES);
    header.extend(["month", "events"]);
    w.write_record(&header)?;
    for s in &trace.steps {
        let mut row = vec![
            s.step.to_string(),
            s.reward.to_string(),
            s.advantage.to_string(),
            s.baseline.to_string(),
        ];
        row.extend(s.theta.iter().map(|t| t.to_string()));
        row.push(s.month.to_string());
        row.push(s.events.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
