use std::collections::{BTreeMap, BTreeSet};

use super::{EdgeRecord, FirmId, GraphError, RelationKind, Sign};
use crate::calendar::Month;

/// Patent counts per CPC code for one firm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpcProfile {
    pub firm: FirmId,
    pub counts: BTreeMap<String, u64>,
}

impl CpcProfile {
    pub fn new<I, S>(firm: FirmId, counts: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (code, n) in counts {
            *map.entry(code.into()).or_insert(0) += n;
        }
        if map.values().all(|&n| n == 0) {
            return Err(GraphError::BadRecord(format!(
                "CPC profile for `{firm}` has no positive count"
            )));
        }
        Ok(Self { firm, counts: map })
    }
}

/// Pearson correlation of two CPC count vectors over their union vocabulary,
/// with codes missing from one profile counted as zero.
pub fn technical_closeness(a: &CpcProfile, b: &CpcProfile) -> Result<f64, GraphError> {
    let vocab: BTreeSet<&String> = a.counts.keys().chain(b.counts.keys()).collect();
    let xs: Vec<f64> = vocab
        .iter()
        .map(|c| a.counts.get(*c).copied().unwrap_or(0) as f64)
        .collect();
    let ys: Vec<f64> = vocab
        .iter()
        .map(|c| b.counts.get(*c).copied().unwrap_or(0) as f64)
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(GraphError::DegenerateProfile(a.firm.clone()));
    }
    if syy == 0.0 {
        return Err(GraphError::DegenerateProfile(b.firm.clone()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Technical-closeness edges for every profile pair whose closeness magnitude
/// exceeds `min_abs`. Degenerate profiles are skipped.
pub fn technical_edges_from_cpc(
    profiles: &[CpcProfile],
    month: Month,
    min_abs: f64,
) -> Vec<EdgeRecord> {
    let mut sorted: Vec<&CpcProfile> = profiles.iter().collect();
    sorted.sort_by(|x, y| x.firm.cmp(&y.firm));
    let mut out = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            if a.firm == b.firm {
                continue;
            }
            match technical_closeness(a, b) {
                Ok(c) if c.abs() > min_abs => out.push(EdgeRecord {
                    month,
                    src: a.firm.clone(),
                    dst: b.firm.clone(),
                    kind: RelationKind::Technical,
                    weight: c.abs(),
                    sign: Sign::of(c),
                }),
                Ok(_) => {}
                Err(e) => log::debug!("skipping CPC pair {}/{}: {e}", a.firm, b.firm),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(firm: &str, counts: &[(&str, u64)]) -> CpcProfile {
        CpcProfile::new(
            FirmId::new(firm).unwrap(),
            counts.iter().map(|(c, n)| (c.to_string(), *n)),
        )
        .unwrap()
    }

    #[test]
    fn self_correlation_is_one() {
        let a = profile("A", &[("A01", 3), ("B02", 1)]);
        assert!((technical_closeness(&a, &a.clone()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn opposite_profiles_are_minus_one() {
        let a = profile("A", &[("A01", 1), ("B02", 0)]);
        let b = profile("B", &[("A01", 0), ("B02", 1)]);
        assert!((technical_closeness(&a, &b).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_profile_is_degenerate() {
        let a = profile("A", &[("A01", 2), ("B02", 2)]);
        let b = profile("B", &[("A01", 5), ("B02", 1)]);
        assert!(matches!(
            technical_closeness(&a, &b),
            Err(GraphError::DegenerateProfile(f)) if f.as_str() == "A"
        ));
        assert!(matches!(
            technical_closeness(&b, &a),
            Err(GraphError::DegenerateProfile(_))
        ));
    }

    #[test]
    fn missing_codes_count_as_zero() {
        // union vocabulary {A01, B02, C03}: (4,1,0) vs (0,1,4)
        let a = profile("A", &[("A01", 4), ("B02", 1)]);
        let b = profile("B", &[("B02", 1), ("C03", 4)]);
        let c = technical_closeness(&a, &b).unwrap();
        // means 5/3 each; sxy = (7/3)(-5/3) + (-2/3)(-2/3) + (-5/3)(7/3)
        let sxy = (7.0 / 3.0) * (-5.0 / 3.0) + (4.0 / 9.0) + (-5.0 / 3.0) * (7.0 / 3.0);
        let sxx = (49.0 + 4.0 + 25.0) / 9.0;
        assert!((c - sxy / sxx).abs() < 1e-12);
    }

    #[test]
    fn cpc_edges_carry_sign() {
        let a = profile("A", &[("A01", 1), ("B02", 0)]);
        let b = profile("B", &[("A01", 0), ("B02", 1)]);
        let m: Month = "2020-01".parse().unwrap();
        let edges = technical_edges_from_cpc(&[b, a], m, 0.0);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].src.as_str(), "A");
        assert_eq!(edges[0].sign, Sign::Negative);
        assert!((edges[0].weight - 1.0).abs() < 1e-12);
    }

    fn arb_counts() -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0u64..50, 3..8)
    }

    proptest! {
        #[test]
        fn closeness_is_symmetric_and_bounded(xs in arb_counts(), ys in arb_counts()) {
            let a = CpcProfile::new(FirmId::new("A").unwrap(),
                xs.iter().enumerate().map(|(i, n)| (format!("C{i:02}"), *n)));
            let b = CpcProfile::new(FirmId::new("B").unwrap(),
                ys.iter().enumerate().map(|(i, n)| (format!("C{:02}", i + 2), *n)));
            let (Ok(a), Ok(b)) = (a, b) else { return Ok(()); };
            match (technical_closeness(&a, &b), technical_closeness(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!(x.abs() <= 1.0 + 1e-12);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric failure"),
            }
        }
    }
}
