//! In-repo stand-in for an external propagator process.
//!
//! Heuristic mode scores seed firms +8 and their one-hop context neighbors
//! `round(8 · decay · Σμ)`; golden-echo mode replays recorded responses by
//! id; chaos mode corrupts a fraction of heuristic responses.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::external::Request;
use super::{ImpactClaim, PredictionSet, DEFAULT_SEED_SCORE};
use crate::market_graph::FirmId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockMode {
    Heuristic,
    GoldenEcho,
    Chaos,
}

#[derive(Debug, Clone)]
pub struct MockConfig {
    pub mode: MockMode,
    pub decay: f64,
    pub chaos_rate: f64,
    pub delay: Duration,
    pub seed: u64,
    /// Recorded response lines by request id (golden-echo mode).
    pub golden: BTreeMap<String, String>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            mode: MockMode::Heuristic,
            decay: 0.5,
            chaos_rate: 0.0,
            delay: Duration::ZERO,
            seed: 0,
            golden: BTreeMap::new(),
        }
    }
}

/// Heuristic prediction for one request.
pub fn heuristic(req: &Request, decay: f64) -> PredictionSet {
    let seeds: BTreeSet<&str> = req.event.company_codes.iter().map(String::as_str).collect();
    let mut neighbor_mu: BTreeMap<&str, f64> = BTreeMap::new();
    for (src, dst, _, mu) in &req.context.edges {
        if seeds.contains(src.as_str()) && !seeds.contains(dst.as_str()) {
            *neighbor_mu.entry(dst.as_str()).or_insert(0.0) += mu;
        }
    }
    let mut claims = Vec::new();
    for s in &seeds {
        if let Ok(f) = FirmId::new(*s) {
            claims.push(ImpactClaim::from_score(f, DEFAULT_SEED_SCORE as i64));
        }
    }
    for (n, mu) in neighbor_mu {
        let score = (DEFAULT_SEED_SCORE as f64 * decay * mu).round() as i64;
        if score != 0 {
            if let Ok(f) = FirmId::new(n) {
                claims.push(ImpactClaim::from_score(f, score));
            }
        }
    }
    let analysis = format!(
        "{} seed firm(s) and {} related firm(s) affected",
        seeds.len(),
        claims.len().saturating_sub(seeds.len())
    );
    PredictionSet::from_claims(req.id.clone(), claims, analysis)
}

/// Applies one of three corruptions, each of which the host must refuse.
fn corrupt(line: &str, kind: u32) -> String {
    match kind % 3 {
        0 => line[..line.len() / 2].to_string(),
        1 => {
            let mut v: serde_json::Value = serde_json::from_str(line).expect("valid response");
            let list = v["impact_analysis"]["affected_companies"]
                .as_array_mut()
                .expect("array");
            list.push(serde_json::json!({
                "name": "CHAOS", "impact_type": "positive", "impact_score": 15
            }));
            v.to_string()
        }
        _ => line.replacen("\"impact_analysis\"", "\"impact\"", 1),
    }
}

/// Serves requests from `input` until end of stream. A malformed request
/// gets an empty line, which the host counts as a refusal.
pub fn serve<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    cfg: &MockConfig,
) -> std::io::Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut served = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if !cfg.delay.is_zero() {
            thread::sleep(cfg.delay);
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Err(e) => {
                log::warn!("malformed request: {e}");
                String::new()
            }
            Ok(req) => match cfg.mode {
                MockMode::Heuristic => heuristic(&req, cfg.decay).to_response_line(),
                MockMode::GoldenEcho => cfg.golden.get(&req.id).cloned().unwrap_or_default(),
                MockMode::Chaos => {
                    let clean = heuristic(&req, cfg.decay).to_response_line();
                    if rng.random_bool(cfg.chaos_rate.clamp(0.0, 1.0)) {
                        corrupt(&clean, rng.random_range(0..3))
                    } else {
                        clean
                    }
                }
            },
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}

/// Loads `id → response line` from a JSONL file of responses.
pub fn load_golden<R: BufRead>(input: R) -> std::io::Result<BTreeMap<String, String>> {
    #[derive(Deserialize)]
    struct IdOnly {
        id: String,
    }
    let mut out = BTreeMap::new();
    for line in input.lines() {
        let line = line?;
        if let Ok(v) = serde_json::from_str::<IdOnly>(&line) {
            out.insert(v.id, line);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::external::{Context, WireEvent};
    use super::super::{parse_prediction, Outcome};
    use super::*;

    fn request(edges: Vec<(&str, &str, &str, f64)>) -> Request {
        Request {
            id: "r1".into(),
            event: WireEvent {
                datetime: "2021-01-05T09:00:00".into(),
                company_codes: vec!["A".into()],
                title: "t".into(),
                body: "b".into(),
            },
            context: Context {
                firms: vec!["A".into(), "B".into(), "C".into()],
                edges: edges
                    .into_iter()
                    .map(|(a, b, c, d)| (a.into(), b.into(), c.into(), d))
                    .collect(),
            },
        }
    }

    #[test]
    fn heuristic_scores() {
        let req = request(vec![
            ("A", "B", "supply_chain", 1.0),
            ("A", "C", "technical", -0.5),
            ("B", "C", "technical", 1.0),
        ]);
        let p = heuristic(&req, 0.5);
        let scores: Vec<(String, i64)> = p
            .claims
            .iter()
            .map(|c| (c.name.to_string(), c.impact_score))
            .collect();
        assert_eq!(
            scores,
            vec![("A".into(), 8), ("B".into(), 4), ("C".into(), -2)]
        );
    }

    #[test]
    fn heuristic_without_edges_claims_only_seeds() {
        let p = heuristic(&request(vec![]), 0.5);
        assert_eq!(p.claims.len(), 1);
        assert_eq!(p.claims[0].name.as_str(), "A");
    }

    #[test]
    fn every_corruption_is_refused() {
        let clean = heuristic(&request(vec![("A", "B", "technical", 1.0)]), 0.5).to_response_line();
        for kind in 0..3 {
            assert!(matches!(
                parse_prediction(&corrupt(&clean, kind)),
                Outcome::Refusal(_)
            ));
        }
    }

    #[test]
    fn malformed_request_gets_empty_line() {
        let mut out = Vec::new();
        serve("not json\n".as_bytes(), &mut out, &MockConfig::default()).unwrap();
        assert_eq!(out, b"\n");
    }

    #[test]
    fn golden_echo_replays() {
        let req = request(vec![]);
        let line = heuristic(&req, 0.5).to_response_line();
        let golden = load_golden(format!("{line}\n").as_bytes()).unwrap();
        let cfg = MockConfig {
            mode: MockMode::GoldenEcho,
            golden,
            ..Default::default()
        };
        let mut out = Vec::new();
        serve(format!("{}\n", req.to_line()).as_bytes(), &mut out, &cfg).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{line}\n"));
    }
}
