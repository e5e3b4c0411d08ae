use super::{InstructionError, InstructionPair};

/// Keeps the highest-scoring pairs seen so far, at most `capacity`.
/// Equal scores rank the earlier insertion first.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatingBuffer {
    capacity: usize,
    entries: Vec<(InstructionPair, f64, u64)>,
    next_seq: u64,
}

impl RotatingBuffer {
    pub fn new(capacity: usize) -> Result<Self, InstructionError> {
        if capacity == 0 {
            return Err(InstructionError::BadConfig(
                "buffer capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
            next_seq: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries by descending score.
    pub fn entries(&self) -> impl Iterator<Item = (&InstructionPair, f64)> {
        self.entries.iter().map(|(p, s, _)| (p, *s))
    }

    pub fn update(&mut self, new: Vec<(InstructionPair, f64)>) -> Result<(), InstructionError> {
        if let Some((_, s)) = new.iter().find(|(_, s)| !s.is_finite()) {
            return Err(InstructionError::NonFiniteScore(*s));
        }
        for (p, s) in new {
            self.entries.push((p, s, self.next_seq));
            self.next_seq += 1;
        }
        self.entries
            .sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        self.entries.truncate(self.capacity);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Month;
    use crate::instruction::QuestionClass;
    use crate::market_graph::{FirmId, RelationKind};
    use proptest::prelude::*;

    fn pair(tag: &str) -> InstructionPair {
        InstructionPair {
            question: tag.into(),
            answer: "Yes".into(),
            class: QuestionClass::FactualJudgment,
            month: Month::new(2021, 1).unwrap(),
            triple: (
                FirmId::new("A").unwrap(),
                RelationKind::Technical,
                FirmId::new("B").unwrap(),
            ),
        }
    }

    fn scores(b: &RotatingBuffer) -> Vec<f64> {
        b.entries().map(|(_, s)| s).collect()
    }

    #[test]
    fn keeps_top_scores() {
        let mut b = RotatingBuffer::new(2).unwrap();
        b.update(vec![(pair("a"), 0.9)]).unwrap();
        b.update(vec![(pair("b"), 0.5), (pair("c"), 0.95)]).unwrap();
        assert_eq!(scores(&b), vec![0.95, 0.9]);
    }

    #[test]
    fn empty_stays_empty() {
        let mut b = RotatingBuffer::new(3).unwrap();
        b.update(vec![]).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn ties_rank_older_first() {
        let mut b = RotatingBuffer::new(3).unwrap();
        b.update(vec![(pair("old"), 0.7)]).unwrap();
        b.update(vec![(pair("new"), 0.7)]).unwrap();
        let order: Vec<&str> = b.entries().map(|(p, _)| p.question.as_str()).collect();
        assert_eq!(order, vec!["old", "new"]);
    }

    #[test]
    fn rejects_nan() {
        let mut b = RotatingBuffer::new(1).unwrap();
        assert!(b.update(vec![(pair("x"), f64::NAN)]).is_err());
    }

    proptest! {
        #[test]
        fn bounded_subset(batches in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 0..5), 0..6), cap in 1usize..5) {
            let mut b = RotatingBuffer::new(cap).unwrap();
            let mut all = Vec::new();
            for (i, batch) in batches.iter().enumerate() {
                let items: Vec<_> = batch.iter().enumerate().map(|(j, s)| (pair(&format!("{i}-{j}")), *s)).collect();
                all.extend(items.iter().map(|(p, _)| p.question.clone()));
                b.update(items).unwrap();
                prop_assert!(b.len() <= cap);
            }
            for (p, _) in b.entries() {
                prop_assert!(all.contains(&p.question));
            }
            let s = scores(&b);
            prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
