//! Templated question/answer pairs from graph snapshots and a rotating
//! buffer of high-impact pairs.

mod buffer;

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::Month;
use crate::market_graph::{FirmId, GraphSnapshot, RelationKind, Sign};

pub use buffer::RotatingBuffer;

#[derive(Debug, Error, PartialEq)]
pub enum InstructionError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("non-finite buffer score {0}")]
    NonFiniteScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionClass {
    Retrieval,
    FactualJudgment,
    FactualQuestion,
}

impl QuestionClass {
    pub const ALL: [QuestionClass; 3] = [
        QuestionClass::Retrieval,
        QuestionClass::FactualJudgment,
        QuestionClass::FactualQuestion,
    ];
}

/// The fixed template bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    CommonCeo,
    UpstreamDownstream,
    MultipleRelations,
    OneRelation,
    SupplyChainJudgment,
    SameFundJudgment,
    SharedBoardJudgment,
    TechnicalJudgment,
    Relationship,
    TechnicalSimilarity,
    TechnicalScore,
}

impl Template {
    pub const ALL: [Template; 11] = [
        Template::CommonCeo,
        Template::UpstreamDownstream,
        Template::MultipleRelations,
        Template::OneRelation,
        Template::SupplyChainJudgment,
        Template::SameFundJudgment,
        Template::SharedBoardJudgment,
        Template::TechnicalJudgment,
        Template::Relationship,
        Template::TechnicalSimilarity,
        Template::TechnicalScore,
    ];

    pub fn class(&self) -> QuestionClass {
        use Template::*;
        match self {
            CommonCeo | UpstreamDownstream | MultipleRelations | OneRelation => {
                QuestionClass::Retrieval
            }
            SupplyChainJudgment | SameFundJudgment | SharedBoardJudgment | TechnicalJudgment => {
                QuestionClass::FactualJudgment
            }
            Relationship | TechnicalSimilarity | TechnicalScore => QuestionClass::FactualQuestion,
        }
    }

    /// `(prefix, separator, suffix)`; single-firm templates have no separator.
    fn pattern(&self) -> (&'static str, Option<&'static str>, &'static str) {
        use Template::*;
        match self {
            CommonCeo => (
                "Which companies have a common CEO relationship with ",
                None,
                "?",
            ),
            UpstreamDownstream => (
                "Which companies have an upstream-downstream relationship with ",
                None,
                "?",
            ),
            MultipleRelations => (
                "Which companies have multiple relationships with ",
                None,
                "?",
            ),
            OneRelation => ("Which companies have one relationship with ", None, "?"),
            SupplyChainJudgment => (
                "Are there supply chain upstream and downstream transactions between ",
                Some(" and "),
                "?",
            ),
            SameFundJudgment => (
                "Are the companies ",
                Some(" and "),
                " held by the same fund?",
            ),
            SharedBoardJudgment => ("Do the companies ", Some(" and "), " share a board member?"),
            TechnicalJudgment => ("Are the companies ", Some(" and "), " technically related?"),
            Relationship => ("What is the relationship between ", Some(" and "), "?"),
            TechnicalSimilarity => (
                "What is the technical similarity between ",
                Some(" and "),
                "?",
            ),
            TechnicalScore => (
                "What is the technical similarity score between ",
                Some(" and "),
                "?",
            ),
        }
    }

    pub fn question(&self, a: &FirmId, b: Option<&FirmId>) -> String {
        let (pre, sep, suf) = self.pattern();
        match (sep, b) {
            (Some(sep), Some(b)) => format!("{pre}{a}{sep}{b}{suf}"),
            _ => format!("{pre}{a}{suf}"),
        }
    }

    /// The answer computed from the snapshot alone.
    pub fn answer(&self, s: &GraphSnapshot, a: usize, b: Option<usize>) -> String {
        use Template::*;
        let yes_no = |x: bool| if x { "Yes" } else { "No" }.to_string();
        let linked = |kind: RelationKind, i: usize, j: usize| {
            s.relation(i, j, kind).is_some() || s.relation(j, i, kind).is_some()
        };
        let list = |pred: &dyn Fn(usize) -> bool| {
            let names: BTreeSet<&str> = (0..s.len())
                .filter(|&j| j != a && pred(j))
                .map(|j| s.firm(j).as_str())
                .collect();
            if names.is_empty() {
                "None".to_string()
            } else {
                names.into_iter().collect::<Vec<_>>().join(", ")
            }
        };
        match (self, b) {
            (CommonCeo, _) => list(&|j| linked(RelationKind::Leadership, a, j)),
            (UpstreamDownstream, _) => list(&|j| linked(RelationKind::SupplyChain, a, j)),
            (MultipleRelations, _) => list(&|j| s.relations_between(a, j).len() >= 2),
            (OneRelation, _) => list(&|j| s.relations_between(a, j).len() == 1),
            (SupplyChainJudgment, Some(b)) => yes_no(linked(RelationKind::SupplyChain, a, b)),
            (SameFundJudgment, Some(b)) => yes_no(linked(RelationKind::FundHolding, a, b)),
            (SharedBoardJudgment, Some(b)) => yes_no(linked(RelationKind::Leadership, a, b)),
            (TechnicalJudgment, Some(b)) => yes_no(linked(RelationKind::Technical, a, b)),
            (Relationship, Some(b)) => describe_relationship(s, a, b),
            (TechnicalSimilarity, Some(b)) => match s.relation(a, b, RelationKind::Technical) {
                Some((_, Sign::Positive)) => "cooperative".into(),
                Some((_, Sign::Negative)) => "competitive".into(),
                None => "none".into(),
            },
            (TechnicalScore, Some(b)) => {
                let v = s
                    .relation(a, b, RelationKind::Technical)
                    .map_or(0.0, |(w, sign)| sign.as_f64() * w);
                format!("{v:.4}")
            }
            _ => "None".into(),
        }
    }

    fn judgment_for(kind: RelationKind) -> Template {
        match kind {
            RelationKind::Technical => Template::TechnicalJudgment,
            RelationKind::SupplyChain => Template::SupplyChainJudgment,
            RelationKind::Leadership => Template::SharedBoardJudgment,
            RelationKind::FundHolding => Template::SameFundJudgment,
        }
    }
}

fn describe_relationship(s: &GraphSnapshot, a: usize, b: usize) -> String {
    let polarity = |sign: Sign| match sign {
        Sign::Positive => "cooperative",
        Sign::Negative => "competitive",
    };
    let (na, nb) = (s.firm(a), s.firm(b));
    let mut parts = Vec::new();
    for kind in RelationKind::ALL {
        let label = kind.as_str().replace('_', " ");
        if kind.is_directed() {
            for (src, dst, x, y) in [(a, b, na, nb), (b, a, nb, na)] {
                if let Some((_, sign)) = s.relation(src, dst, kind) {
                    parts.push(format!("{label} from {x} to {y} ({})", polarity(sign)));
                }
            }
        } else if let Some((_, sign)) = s.relation(a, b, kind) {
            parts.push(format!("{label} ({})", polarity(sign)));
        }
    }
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("; ")
    }
}

/// A generated question with its answer and the relation it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub question: String,
    pub answer: String,
    pub class: QuestionClass,
    pub month: Month,
    /// `(src, relation, dst)`.
    pub triple: (FirmId, RelationKind, FirmId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstructionConfig {
    pub classes: Vec<QuestionClass>,
    /// Emit one "No" judgment per edge against a random unrelated firm.
    pub negatives: bool,
    pub seed: u64,
}

impl Default for InstructionConfig {
    fn default() -> Self {
        Self {
            classes: QuestionClass::ALL.to_vec(),
            negatives: true,
            seed: 0,
        }
    }
}

/// Pairs for every stored relation of the snapshot, in edge order.
pub fn generate(
    s: &GraphSnapshot,
    cfg: &InstructionConfig,
) -> Result<Vec<InstructionPair>, InstructionError> {
    if cfg.classes.is_empty() {
        return Err(InstructionError::BadConfig(
            "no question class enabled".into(),
        ));
    }
    let enabled = |c: QuestionClass| cfg.classes.contains(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for rec in s.to_records() {
        let a = s
            .index_of(&rec.src)
            .expect("record firms are in the snapshot");
        let b = s
            .index_of(&rec.dst)
            .expect("record firms are in the snapshot");
        let triple = (rec.src.clone(), rec.kind, rec.dst.clone());
        let mut emit = |t: Template, x: usize, y: Option<usize>| {
            out.push(InstructionPair {
                question: t.question(s.firm(x), y.map(|y| s.firm(y))),
                answer: t.answer(s, x, y),
                class: t.class(),
                month: s.month(),
                triple: triple.clone(),
            });
        };
        if enabled(QuestionClass::Retrieval) {
            let count = s.relations_between(a, b).len();
            let t = if count >= 2 {
                Template::MultipleRelations
            } else {
                Template::OneRelation
            };
            emit(t, a, None);
            match rec.kind {
                RelationKind::Leadership => emit(Template::CommonCeo, a, None),
                RelationKind::SupplyChain => emit(Template::UpstreamDownstream, a, None),
                _ => {}
            }
        }
        if enabled(QuestionClass::FactualJudgment) {
            let t = Template::judgment_for(rec.kind);
            emit(t, a, Some(b));
            if cfg.negatives {
                let others: Vec<usize> = (0..s.len())
                    .filter(|&j| j != a && !s.relations_between(a, j).contains(&rec.kind))
                    .collect();
                if let Some(&c) = others.choose(&mut rng) {
                    emit(t, a, Some(c));
                }
            }
        }
        if enabled(QuestionClass::FactualQuestion) {
            emit(Template::Relationship, a, Some(b));
            if rec.kind == RelationKind::Technical {
                emit(Template::TechnicalSimilarity, a, Some(b));
                emit(Template::TechnicalScore, a, Some(b));
            }
        }
    }
    Ok(out)
}

/// Parses a question back to its template and firms, then answers it from
/// the snapshot. `None` when the text matches no template.
pub fn answer_question(s: &GraphSnapshot, question: &str) -> Option<(Template, String)> {
    for t in Template::ALL {
        let (pre, sep, suf) = t.pattern();
        let Some(inner) = question.strip_prefix(pre).and_then(|q| q.strip_suffix(suf)) else {
            continue;
        };
        match sep {
            None => {
                if let Some(a) = s.index_of(&FirmId::new(inner).ok()?) {
                    return Some((t, t.answer(s, a, None)));
                }
            }
            Some(sep) => {
                for (pos, _) in inner.match_indices(sep) {
                    let (x, y) = (&inner[..pos], &inner[pos + sep.len()..]);
                    let (Ok(x), Ok(y)) = (FirmId::new(x), FirmId::new(y)) else {
                        continue;
                    };
                    if let (Some(a), Some(b)) = (s.index_of(&x), s.index_of(&y)) {
                        return Some((t, t.answer(s, a, Some(b))));
                    }
                }
            }
        }
    }
    None
}

#[derive(Serialize)]
struct Line<'a> {
    question: &'a str,
    answer: &'a str,
    class: QuestionClass,
    month: Month,
    triple: [&'a str; 3],
}

/// Writes pairs as JSON lines with a `triple` array `[src, relation, dst]`.
pub fn write_jsonl<W: Write>(mut w: W, pairs: &[InstructionPair]) -> std::io::Result<()> {
    for p in pairs {
        let line = Line {
            question: &p.question,
            answer: &p.answer,
            class: p.class,
            month: p.month,
            triple: [
                p.triple.0.as_str(),
                p.triple.1.as_str(),
                p.triple.2.as_str(),
            ],
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_graph::{EdgeRecord, LayerWeights};

    fn month() -> Month {
        Month::new(2021, 1).unwrap()
    }

    fn snapshot(edges: &[(&str, &str, RelationKind, f64, Sign)]) -> GraphSnapshot {
        let recs: Vec<EdgeRecord> = edges
            .iter()
            .map(|(a, b, k, w, s)| EdgeRecord::new(month(), a, b, *k, *w, *s).unwrap())
            .collect();
        GraphSnapshot::build(month(), &recs, None, &LayerWeights::uniform(1.0)).unwrap()
    }

    #[test]
    fn single_supply_chain_edge() {
        let s = snapshot(&[("A", "B", RelationKind::SupplyChain, 3.0, Sign::Positive)]);
        let pairs = generate(&s, &InstructionConfig::default()).unwrap();
        let classes: BTreeSet<QuestionClass> = pairs.iter().map(|p| p.class).collect();
        assert_eq!(classes.len(), 3);
        let j = pairs
            .iter()
            .find(|p| p.class == QuestionClass::FactualJudgment)
            .unwrap();
        assert_eq!(
            j.question,
            "Are there supply chain upstream and downstream transactions between A and B?"
        );
        assert_eq!(j.answer, "Yes");
    }

    #[test]
    fn empty_snapshot_and_disabled_classes() {
        let s = GraphSnapshot::empty(month());
        assert!(generate(&s, &InstructionConfig::default())
            .unwrap()
            .is_empty());
        let cfg = InstructionConfig {
            classes: vec![],
            ..InstructionConfig::default()
        };
        assert!(matches!(
            generate(&s, &cfg),
            Err(InstructionError::BadConfig(_))
        ));
    }

    #[test]
    fn technical_score_has_four_decimals() {
        let s = snapshot(&[
            ("A", "B", RelationKind::Technical, 0.123456, Sign::Negative),
            ("A", "B", RelationKind::FundHolding, 2.0, Sign::Positive),
            ("A", "C", RelationKind::Leadership, 1.0, Sign::Positive),
        ]);
        let pairs = generate(&s, &InstructionConfig::default()).unwrap();
        let score = pairs
            .iter()
            .find(|p| {
                p.question
                    .starts_with("What is the technical similarity score")
            })
            .unwrap();
        assert_eq!(score.answer, "-0.1235");
        let multi = pairs
            .iter()
            .find(|p| p.question == "Which companies have multiple relationships with A?")
            .unwrap();
        assert_eq!(multi.answer, "B");
        for p in &pairs {
            assert_eq!(
                answer_question(&s, &p.question).unwrap().1,
                p.answer,
                "{}",
                p.question
            );
        }
    }

    #[test]
    fn deterministic_jsonl() {
        let s = snapshot(&[
            ("A", "B", RelationKind::Technical, 0.5, Sign::Positive),
            ("B", "C", RelationKind::SupplyChain, 1.0, Sign::Positive),
            ("C", "D", RelationKind::Leadership, 1.0, Sign::Negative),
        ]);
        let cfg = InstructionConfig {
            seed: 3,
            ..InstructionConfig::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_jsonl(&mut a, &generate(&s, &cfg).unwrap()).unwrap();
        write_jsonl(&mut b, &generate(&s, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let first: serde_json::Value =
            serde_json::from_slice(a.split(|c| *c == b'\n').next().unwrap()).unwrap();
        assert_eq!(first["triple"], serde_json::json!(["A", "technical", "B"]));
        assert_eq!(first["month"], "2021-01");
    }
}
