//! Host side of the line-delimited propagator protocol.
//!
//! One request object per line goes to the child's stdin; one response
//! object per line is read from its stdout. A reader thread forwards lines
//! over a channel so that every request can be bounded by a timeout.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    parse_prediction, Event, Outcome, Propagator, PropagatorError, Refusal, RefusalReason,
};
use crate::market_graph::{FirmId, GraphSnapshot, RelationKind};

pub const DEFAULT_EDGE_BUDGET: usize = 500;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const CONTEXT_HOPS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEvent {
    pub datetime: String,
    pub company_codes: Vec<String>,
    pub title: String,
    pub body: String,
}

/// Trimmed graph view sent with each request. Edges are
/// `[src, dst, relation, layer μ]`; symmetric relations appear once per
/// direction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub firms: Vec<String>,
    pub edges: Vec<(String, String, String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub event: WireEvent,
    pub context: Context,
}

impl Request {
    pub fn new(e: &Event, context: Context) -> Self {
        Self {
            id: e.id.clone(),
            event: WireEvent {
                datetime: e.datetime_string(),
                company_codes: e.company_codes.iter().map(|f| f.to_string()).collect(),
                title: e.title.clone(),
                body: e.body.clone(),
            },
            context,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

/// The seeds' 2-hop neighborhood with at most `budget` edge rows. When the
/// budget binds, the strongest `|μ|` rows are kept.
pub fn trim_context(s: &GraphSnapshot, e: &Event, budget: usize) -> Context {
    let seeds: BTreeSet<FirmId> = e
        .company_codes
        .iter()
        .filter(|f| s.contains(f))
        .cloned()
        .collect();
    let hood = s
        .k_hop_neighborhood(&seeds, CONTEXT_HOPS)
        .expect("seeds were filtered to the snapshot");
    let idx: Vec<usize> = hood.iter().filter_map(|f| s.index_of(f)).collect();
    let inside: BTreeSet<usize> = idx.iter().copied().collect();
    let mut rows = Vec::new();
    for &i in &idx {
        for c in s.channels(i) {
            if !inside.contains(&c.target) {
                continue;
            }
            for kind in RelationKind::ALL {
                let m = c.by_layer[kind.index()];
                if m != 0.0 {
                    rows.push((i, c.target, kind, m));
                }
            }
        }
    }
    if rows.len() > budget {
        rows.sort_by(|a, b| {
            b.3.abs()
                .total_cmp(&a.3.abs())
                .then((a.0, a.1, a.2.as_str()).cmp(&(b.0, b.1, b.2.as_str())))
        });
        rows.truncate(budget);
        rows.sort_by(|a, b| (a.0, a.1, a.2.as_str()).cmp(&(b.0, b.1, b.2.as_str())));
    }
    Context {
        firms: hood.iter().map(|f| f.to_string()).collect(),
        edges: rows
            .into_iter()
            .map(|(i, j, k, m)| {
                (
                    s.firm(i).to_string(),
                    s.firm(j).to_string(),
                    k.as_str().to_string(),
                    m,
                )
            })
            .collect(),
    }
}

/// A running external propagator process.
pub struct ExternalClient {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<Option<String>>,
    /// Responses still owed for requests that already timed out.
    late: usize,
    timeout: Duration,
    edge_budget: usize,
}

impl ExternalClient {
    /// Starts `command`, split on whitespace into program and arguments.
    pub fn spawn(command: &str) -> Result<Self, PropagatorError> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| PropagatorError::Spawn("empty command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PropagatorError::Spawn(format!("{command}: {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => {
                        let _ = tx.send(None);
                        break;
                    }
                    Ok(_) => {
                        if tx.send(Some(line)).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            child,
            stdin,
            lines: rx,
            late: 0,
            timeout: DEFAULT_TIMEOUT,
            edge_budget: DEFAULT_EDGE_BUDGET,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_edge_budget(mut self, budget: usize) -> Self {
        self.edge_budget = budget;
        self
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends one request and waits for its response.
    pub fn request(
        &mut self,
        req: &Request,
        timeout: Duration,
    ) -> Result<Outcome, PropagatorError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| PropagatorError::ClientDead("stdin closed".into()))?;
        let mut line = req.to_line();
        line.push('\n');
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            self.stdin = None;
            return Err(PropagatorError::ClientDead(e.to_string()));
        }
        let died = || {
            Ok(Outcome::Refusal(Refusal::new(
                Some(req.id.clone()),
                RefusalReason::Died,
                "client closed its output",
            )))
        };
        loop {
            match self.lines.recv_timeout(timeout) {
                Ok(Some(text)) => {
                    if self.late > 0 && response_id(&text).as_deref() != Some(req.id.as_str()) {
                        self.late -= 1;
                        continue;
                    }
                    return Ok(match parse_prediction(&text) {
                        Outcome::Prediction(p) if p.event_id != req.id => {
                            Outcome::Refusal(Refusal::new(
                                Some(req.id.clone()),
                                RefusalReason::IdMismatch,
                                format!("response for `{}`", p.event_id),
                            ))
                        }
                        Outcome::Refusal(mut r) => {
                            r.id = Some(req.id.clone());
                            Outcome::Refusal(r)
                        }
                        ok => ok,
                    });
                }
                Ok(None) | Err(RecvTimeoutError::Disconnected) => return died(),
                Err(RecvTimeoutError::Timeout) => {
                    self.late += 1;
                    return Ok(Outcome::Refusal(Refusal::new(
                        Some(req.id.clone()),
                        RefusalReason::Timeout,
                        format!("no response within {} ms", timeout.as_millis()),
                    )));
                }
            }
        }
    }
}

fn response_id(text: &str) -> Option<String> {
    #[derive(Deserialize)]
    struct IdOnly {
        id: String,
    }
    serde_json::from_str::<IdOnly>(text.trim())
        .ok()
        .map(|v| v.id)
}

impl Drop for ExternalClient {
    fn drop(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Sends `e` with a trimmed view of `s` to the client and parses the reply.
pub fn run_external(
    client: &mut ExternalClient,
    s: &GraphSnapshot,
    e: &Event,
    timeout: Duration,
) -> Result<Outcome, PropagatorError> {
    let req = Request::new(e, trim_context(s, e, client.edge_budget));
    client.request(&req, timeout)
}

impl Propagator for ExternalClient {
    fn name(&self) -> String {
        format!("external:{}", self.command)
    }

    fn predict(
        &mut self,
        snapshot: &GraphSnapshot,
        event: &Event,
    ) -> Result<Outcome, PropagatorError> {
        let timeout = self.timeout;
        run_external(self, snapshot, event, timeout)
    }
}

/// Tally of outcomes keyed by reason, for logging.
pub fn outcome_counts(outcomes: &[Outcome]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for o in outcomes {
        let key = match o {
            Outcome::Prediction(_) => "ok".to_string(),
            Outcome::Refusal(r) => r.reason.to_string(),
        };
        *m.entry(key).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Month;
    use crate::market_graph::{EdgeRecord, LayerWeights, Sign};
    use chrono::NaiveDate;

    fn month() -> Month {
        "2021-01".parse().unwrap()
    }

    fn event(seeds: &[&str]) -> Event {
        Event {
            id: "e1".into(),
            datetime: NaiveDate::from_ymd_opt(2021, 1, 5)
                .unwrap()
                .and_hms_opt(9, 0, 0)
                .unwrap(),
            company_codes: seeds.iter().map(|s| FirmId::new(*s).unwrap()).collect(),
            title: "t".into(),
            body: "b".into(),
            action: None,
        }
    }

    fn star(n: usize) -> GraphSnapshot {
        let recs: Vec<EdgeRecord> = (0..n)
            .map(|i| {
                EdgeRecord::new(
                    month(),
                    "HUB",
                    &format!("L{i:03}"),
                    RelationKind::SupplyChain,
                    1.0 + i as f64,
                    Sign::Positive,
                )
                .unwrap()
            })
            .collect();
        GraphSnapshot::build(month(), &recs, None, &LayerWeights::default()).unwrap()
    }

    #[test]
    fn context_is_two_hop_and_sorted() {
        let recs = vec![
            EdgeRecord::new(
                month(),
                "A",
                "B",
                RelationKind::Technical,
                1.0,
                Sign::Positive,
            )
            .unwrap(),
            EdgeRecord::new(
                month(),
                "B",
                "C",
                RelationKind::SupplyChain,
                1.0,
                Sign::Negative,
            )
            .unwrap(),
            EdgeRecord::new(
                month(),
                "C",
                "D",
                RelationKind::SupplyChain,
                1.0,
                Sign::Positive,
            )
            .unwrap(),
        ];
        let s = GraphSnapshot::build(month(), &recs, None, &LayerWeights::default()).unwrap();
        let ctx = trim_context(&s, &event(&["A"]), 500);
        assert_eq!(ctx.firms, vec!["A", "B", "C"]);
        assert_eq!(
            ctx.edges,
            vec![
                ("A".into(), "B".into(), "technical".into(), 0.25),
                ("B".into(), "A".into(), "technical".into(), 0.25),
                ("B".into(), "C".into(), "supply_chain".into(), -0.25),
            ]
        );
    }

    #[test]
    fn budget_keeps_strongest() {
        let s = star(10);
        let ctx = trim_context(&s, &event(&["HUB"]), 3);
        assert_eq!(ctx.edges.len(), 3);
        let dsts: Vec<&str> = ctx.edges.iter().map(|e| e.1.as_str()).collect();
        assert_eq!(dsts, vec!["L007", "L008", "L009"]);
    }

    #[test]
    fn request_line_shape() {
        let req = Request::new(&event(&["A"]), Context::default());
        assert_eq!(
            req.to_line(),
            r#"{"id":"e1","event":{"datetime":"2021-01-05T09:00:00","company_codes":["A"],"title":"t","body":"b"},"context":{"firms":[],"edges":[]}}"#
        );
    }

    #[test]
    fn missing_program_fails_to_spawn() {
        assert!(matches!(
            ExternalClient::spawn("/nonexistent/propagator-binary"),
            Err(PropagatorError::Spawn(_))
        ));
        assert!(matches!(
            ExternalClient::spawn("  "),
            Err(PropagatorError::Spawn(_))
        ));
    }

    #[test]
    fn echoing_cat_yields_schema_violation() {
        // `cat` echoes the request, which parses but has no impact_analysis
        let Ok(mut c) = ExternalClient::spawn("cat") else {
            return;
        };
        let req = Request::new(&event(&["A"]), Context::default());
        let out = c.request(&req, Duration::from_secs(5)).unwrap();
        assert_eq!(
            out.refusal().unwrap().reason,
            RefusalReason::SchemaViolation
        );
    }

    #[test]
    fn exiting_child_reports_died_or_dead() {
        let Ok(mut c) = ExternalClient::spawn("true") else {
            return;
        };
        let req = Request::new(&event(&["A"]), Context::default());
        thread::sleep(Duration::from_millis(100));
        match c.request(&req, Duration::from_secs(5)) {
            Ok(o) => assert_eq!(o.refusal().unwrap().reason, RefusalReason::Died),
            Err(e) => assert!(matches!(e, PropagatorError::ClientDead(_))),
        }
    }
}
