use std::collections::{BTreeMap, BTreeSet};

use super::{
    DiffusionParams, Event, ImpactClaim, PredictionSet, PropagatorError, ShockVector, MAX_HOPS,
};
use crate::market_graph::{FirmId, GraphSnapshot};

/// Seed score used when the event carries no explicit magnitude.
pub const DEFAULT_SEED_SCORE: i32 = 8;

/// Signed diffusion with the default seed score.
pub fn propagate_diffusion(
    s: &GraphSnapshot,
    e: &Event,
    p: &DiffusionParams,
) -> Result<PredictionSet, PropagatorError> {
    propagate_with_score(s, e, p, DEFAULT_SEED_SCORE)
}

/// Signed diffusion from the event's firms.
///
/// Seeds start at `v = s0 · polarity · score / 10`. Each hop pushes the
/// previous hop's frontier along every channel with transfer
/// `A(i, j) = Σ_k γ_k μ_k(i, j)`; node values accumulate over hops
/// `0..=H`, so `v` is the sum over all walks of length ≤ H. `Y_ij` holds
/// the flow through channel `(i, j)` divided by `μ(i, j)`, and `Y_jj` the
/// seed value, which makes `aggregate_shocks` return exactly `v`.
pub fn propagate_with_score(
    s: &GraphSnapshot,
    e: &Event,
    p: &DiffusionParams,
    score: i32,
) -> Result<PredictionSet, PropagatorError> {
    p.validate()?;
    let seeds: BTreeSet<usize> = e
        .company_codes
        .iter()
        .filter_map(|f| s.index_of(f))
        .collect();
    if seeds.is_empty() {
        return Err(PropagatorError::NoSeedInGraph(e.id.clone()));
    }
    let seed_value = p.seed_scale * e.polarity() * score as f64 / 10.0;
    let gamma = p.gamma.as_array();
    let n = s.len();

    let mut frontier = vec![0.0; n];
    for &i in &seeds {
        frontier[i] = seed_value;
    }
    let mut value = frontier.clone();
    let mut flow: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for _ in 0..p.hops.min(MAX_HOPS) {
        let mut next = vec![0.0; n];
        for (i, &fi) in frontier.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            for c in s.channels(i) {
                let a: f64 = c.by_layer.iter().zip(gamma).map(|(m, g)| m * g).sum();
                if a == 0.0 {
                    continue;
                }
                let f = fi * a;
                next[c.target] += f;
                *flow.entry((i, c.target)).or_insert(0.0) += f;
            }
        }
        for (v, x) in value.iter_mut().zip(&next) {
            *v += x;
        }
        frontier = next;
    }

    let mut y = BTreeMap::new();
    for &i in &seeds {
        y.insert((s.firm(i).clone(), s.firm(i).clone()), seed_value);
    }
    for ((i, j), f) in flow {
        y.insert((s.firm(i).clone(), s.firm(j).clone()), f / s.mu_at(i, j));
    }
    let claims = value
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            let score = (v * 10.0).round() as i64;
            (score != 0).then(|| ImpactClaim::from_score(s.firm(i).clone(), score))
        })
        .collect();
    Ok(PredictionSet {
        event_id: e.id.clone(),
        claims,
        analysis: format!(
            "signed diffusion, {} hop(s), {} seed(s)",
            p.hops,
            seeds.len()
        ),
        y,
    })
}

/// `Z_j = Σ_i μ(i, j) · Y_ij + Y_jj`. Entries naming firms outside the
/// snapshot are logged and skipped.
pub fn aggregate_shocks(s: &GraphSnapshot, pred: &PredictionSet) -> ShockVector {
    let mut z: BTreeMap<FirmId, f64> = BTreeMap::new();
    let mut unresolved = BTreeSet::new();
    for ((src, dst), &y) in &pred.y {
        let (Some(i), Some(j)) = (s.index_of(src), s.index_of(dst)) else {
            for f in [src, dst] {
                if !s.contains(f) && unresolved.insert(f.clone()) {
                    log::warn!(
                        "event {}: firm {f} not in snapshot {}",
                        pred.event_id,
                        s.month()
                    );
                }
            }
            continue;
        };
        let weight = if i == j { 1.0 } else { s.mu_at(i, j) };
        *z.entry(dst.clone()).or_insert(0.0) += weight * y;
    }
    ShockVector {
        values: z,
        unresolved,
    }
}
