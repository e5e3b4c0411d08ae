use std::collections::BTreeMap;

use serde::Serialize;

use super::{GraphError, GraphSeries, RelationKind};

/// Aggregate statistics over a graph series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesStats {
    pub graphs: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    /// Percentages of connected (unordered) firm pairs linked by exactly
    /// one, two, three or four relation layers, pooled over the series.
    pub single_pct: f64,
    pub dual_pct: f64,
    pub triple_pct: f64,
    pub quad_pct: f64,
    pub connected_pairs: usize,
}

pub fn snapshot_stats(series: &GraphSeries) -> Result<SeriesStats, GraphError> {
    if series.is_empty() {
        return Err(GraphError::EmptySeries);
    }
    let graphs = series.len();
    let mut nodes = 0usize;
    let mut edges = 0usize;
    let mut multiplicity = [0usize; 4];
    for s in series.iter() {
        nodes += s.len();
        edges += s.edge_count();
        let mut pair_layers: BTreeMap<(usize, usize), u8> = BTreeMap::new();
        for kind in RelationKind::ALL {
            let mut seen = std::collections::BTreeSet::new();
            for (a, b, _, _) in s.layer_entries(kind) {
                let key = (a.min(b), a.max(b));
                if seen.insert(key) {
                    *pair_layers.entry(key).or_insert(0) += 1;
                }
            }
        }
        for count in pair_layers.values() {
            multiplicity[usize::from(*count) - 1] += 1;
        }
    }
    let pairs: usize = multiplicity.iter().sum();
    let pct = |c: usize| {
        if pairs == 0 {
            0.0
        } else {
            100.0 * c as f64 / pairs as f64
        }
    };
    Ok(SeriesStats {
        graphs,
        avg_nodes: nodes as f64 / graphs as f64,
        avg_edges: edges as f64 / graphs as f64,
        single_pct: pct(multiplicity[0]),
        dual_pct: pct(multiplicity[1]),
        triple_pct: pct(multiplicity[2]),
        quad_pct: pct(multiplicity[3]),
        connected_pairs: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Month;
    use crate::market_graph::{EdgeRecord, LayerWeights, Sign};

    fn rec(m: Month, s: &str, d: &str, kind: RelationKind) -> EdgeRecord {
        EdgeRecord::new(m, s, d, kind, 1.0, Sign::Positive).unwrap()
    }

    #[test]
    fn empty_series_is_an_error() {
        assert!(matches!(
            snapshot_stats(&GraphSeries::new()),
            Err(GraphError::EmptySeries)
        ));
    }

    #[test]
    fn single_layer_pairs() {
        let m: Month = "2020-01".parse().unwrap();
        let series = GraphSeries::from_records(
            &[
                rec(m, "A", "B", RelationKind::SupplyChain),
                rec(m, "B", "C", RelationKind::Leadership),
            ],
            None,
            &LayerWeights::default(),
        )
        .unwrap();
        let st = snapshot_stats(&series).unwrap();
        assert_eq!(st.graphs, 1);
        assert_eq!(st.avg_nodes, 3.0);
        assert_eq!(st.single_pct, 100.0);
    }

    #[test]
    fn average_nodes_over_months() {
        let m1: Month = "2020-01".parse().unwrap();
        let m2 = m1.succ();
        let series = GraphSeries::from_records(
            &[
                rec(m1, "A", "B", RelationKind::Technical),
                rec(m2, "A", "B", RelationKind::Technical),
                rec(m2, "C", "D", RelationKind::Technical),
            ],
            None,
            &LayerWeights::default(),
        )
        .unwrap();
        assert_eq!(snapshot_stats(&series).unwrap().avg_nodes, 3.0);
    }

    #[test]
    fn dual_pair_counted_once() {
        let m: Month = "2020-01".parse().unwrap();
        let series = GraphSeries::from_records(
            &[
                rec(m, "A", "B", RelationKind::SupplyChain),
                rec(m, "B", "A", RelationKind::SupplyChain),
                rec(m, "A", "B", RelationKind::FundHolding),
            ],
            None,
            &LayerWeights::default(),
        )
        .unwrap();
        let st = snapshot_stats(&series).unwrap();
        assert_eq!(st.connected_pairs, 1);
        assert_eq!(st.dual_pct, 100.0);
    }
}
