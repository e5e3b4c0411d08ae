use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::market_graph::FirmId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpactType {
    Positive,
    Negative,
    Neutral,
}

impl ImpactType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImpactType::Positive => "positive",
            ImpactType::Negative => "negative",
            ImpactType::Neutral => "neutral",
        }
    }

    pub fn of_score(score: i64) -> Self {
        match score.signum() {
            1 => ImpactType::Positive,
            -1 => ImpactType::Negative,
            _ => ImpactType::Neutral,
        }
    }

    fn admits(&self, score: i64) -> bool {
        *self == ImpactType::of_score(score)
    }
}

impl FromStr for ImpactType {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "positive" => Ok(ImpactType::Positive),
            "negative" => Ok(ImpactType::Negative),
            "neutral" => Ok(ImpactType::Neutral),
            _ => Err(()),
        }
    }
}

/// One firm's claimed impact; the score is signed and agrees with the type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactClaim {
    pub name: FirmId,
    pub impact_type: ImpactType,
    pub impact_score: i64,
}

impl ImpactClaim {
    /// Claim whose type follows the sign of `score`, which is clamped to ±10.
    pub fn from_score(name: FirmId, score: i64) -> Self {
        let s = score.clamp(-MAX_SCORE, MAX_SCORE);
        Self {
            name,
            impact_type: ImpactType::of_score(s),
            impact_score: s,
        }
    }
}

pub const MAX_SCORE: i64 = 10;

/// A propagator's output for one event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub event_id: String,
    pub claims: Vec<ImpactClaim>,
    pub analysis: String,
    /// Sparse channel matrix: `(source, target) → Y`. Direct per-firm
    /// shocks sit on the diagonal.
    pub y: BTreeMap<(FirmId, FirmId), f64>,
}

impl PredictionSet {
    /// Claims as direct shocks: `Y_jj = score / 10`, repeated firms summed.
    pub fn from_claims(
        event_id: impl Into<String>,
        claims: Vec<ImpactClaim>,
        analysis: impl Into<String>,
    ) -> Self {
        let mut y = BTreeMap::new();
        for c in &claims {
            *y.entry((c.name.clone(), c.name.clone())).or_insert(0.0) +=
                c.impact_score as f64 / MAX_SCORE as f64;
        }
        Self {
            event_id: event_id.into(),
            claims,
            analysis: analysis.into(),
            y,
        }
    }

    /// Response line in the wire schema, without a trailing newline.
    pub fn to_response_line(&self) -> String {
        #[derive(Serialize)]
        struct Analysis<'a> {
            affected_companies: &'a [ImpactClaim],
            analysis: &'a str,
        }
        #[derive(Serialize)]
        struct Response<'a> {
            id: &'a str,
            impact_analysis: Analysis<'a>,
        }
        serde_json::to_string(&Response {
            id: &self.event_id,
            impact_analysis: Analysis {
                affected_companies: &self.claims,
                analysis: &self.analysis,
            },
        })
        .expect("prediction serializes")
    }

    /// Multiplies every `Y` entry by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.y.values_mut() {
            *v *= c;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefusalReason {
    EmptyOutput,
    ParseError,
    SchemaViolation,
    ScoreOutOfRange,
    InconsistentImpactType,
    IdMismatch,
    Timeout,
    Died,
    NoSeed,
}

impl RefusalReason {
    pub const ALL: [RefusalReason; 9] = [
        RefusalReason::EmptyOutput,
        RefusalReason::ParseError,
        RefusalReason::SchemaViolation,
        RefusalReason::ScoreOutOfRange,
        RefusalReason::InconsistentImpactType,
        RefusalReason::IdMismatch,
        RefusalReason::Timeout,
        RefusalReason::Died,
        RefusalReason::NoSeed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RefusalReason::EmptyOutput => "empty_output",
            RefusalReason::ParseError => "parse_error",
            RefusalReason::SchemaViolation => "schema_violation",
            RefusalReason::ScoreOutOfRange => "score_out_of_range",
            RefusalReason::InconsistentImpactType => "inconsistent_impact_type",
            RefusalReason::IdMismatch => "id_mismatch",
            RefusalReason::Timeout => "timeout",
            RefusalReason::Died => "died",
            RefusalReason::NoSeed => "no_seed",
        }
    }
}

impl fmt::Display for RefusalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A response that could not be turned into a valid prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refusal {
    pub id: Option<String>,
    pub reason: RefusalReason,
    pub detail: String,
}

impl Refusal {
    pub fn new(id: Option<String>, reason: RefusalReason, detail: impl Into<String>) -> Self {
        Self {
            id,
            reason,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Prediction(PredictionSet),
    Refusal(Refusal),
}

impl Outcome {
    pub fn prediction(&self) -> Option<&PredictionSet> {
        match self {
            Outcome::Prediction(p) => Some(p),
            Outcome::Refusal(_) => None,
        }
    }

    pub fn refusal(&self) -> Option<&Refusal> {
        match self {
            Outcome::Refusal(r) => Some(r),
            Outcome::Prediction(_) => None,
        }
    }
}

/// Strictly parses one response line of the `impact_analysis` schema.
/// Unknown extra keys are ignored; everything else must match exactly.
pub fn parse_prediction(text: &str) -> Outcome {
    let text = text.trim();
    if text.is_empty() {
        return refuse(None, RefusalReason::EmptyOutput, "empty response");
    }
    let root: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return refuse(None, RefusalReason::ParseError, e.to_string()),
    };
    let Some(obj) = root.as_object() else {
        return refuse(
            None,
            RefusalReason::SchemaViolation,
            "top level is not an object",
        );
    };
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return refuse(None, RefusalReason::SchemaViolation, "missing string `id`"),
    };
    let schema = |msg: &str| refuse(Some(id.clone()), RefusalReason::SchemaViolation, msg);
    let Some(ia) = obj.get("impact_analysis").and_then(Value::as_object) else {
        return schema("missing object `impact_analysis`");
    };
    let Some(companies) = ia.get("affected_companies").and_then(Value::as_array) else {
        return schema("missing array `affected_companies`");
    };
    let Some(analysis) = ia.get("analysis").and_then(Value::as_str) else {
        return schema("missing string `analysis`");
    };
    let mut claims = Vec::with_capacity(companies.len());
    for (k, c) in companies.iter().enumerate() {
        let Some(c) = c.as_object() else {
            return schema(&format!("affected_companies[{k}] is not an object"));
        };
        let name = match c.get("name").and_then(Value::as_str).map(FirmId::new) {
            Some(Ok(n)) => n,
            _ => return schema(&format!("affected_companies[{k}]: bad `name`")),
        };
        let Some(impact_type) = c
            .get("impact_type")
            .and_then(Value::as_str)
            .and_then(|s| s.parse::<ImpactType>().ok())
        else {
            return schema(&format!("affected_companies[{k}]: bad `impact_type`"));
        };
        let score = match c.get("impact_score") {
            Some(Value::Number(n)) => match n.as_i64() {
                Some(s) => s,
                None if n
                    .as_f64()
                    .is_some_and(|f| f.is_finite() && f.abs() > MAX_SCORE as f64) =>
                {
                    return refuse(
                        Some(id),
                        RefusalReason::ScoreOutOfRange,
                        format!("{name}: score {n}"),
                    )
                }
                None => {
                    return schema(&format!(
                        "affected_companies[{k}]: score {n} is not an integer"
                    ))
                }
            },
            _ => return schema(&format!("affected_companies[{k}]: missing `impact_score`")),
        };
        if !(-MAX_SCORE..=MAX_SCORE).contains(&score) {
            return refuse(
                Some(id),
                RefusalReason::ScoreOutOfRange,
                format!("{name}: score {score}"),
            );
        }
        if !impact_type.admits(score) {
            return refuse(
                Some(id),
                RefusalReason::InconsistentImpactType,
                format!("{name}: {} with score {score}", impact_type.as_str()),
            );
        }
        claims.push(ImpactClaim {
            name,
            impact_type,
            impact_score: score,
        });
    }
    Outcome::Prediction(PredictionSet::from_claims(id, claims, analysis))
}

fn refuse(id: Option<String>, reason: RefusalReason, detail: impl Into<String>) -> Outcome {
    Outcome::Refusal(Refusal::new(id, reason, detail))
}
