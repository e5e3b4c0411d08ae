use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::{CpcProfile, EdgeRecord, FirmId, GraphError, LayerWeights, RelationKind, Sign};
use crate::calendar::Month;

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerEdge {
    /// Aggregated raw magnitude.
    weight: f64,
    sign: Sign,
    /// `weight / month-max` for the layer.
    normalized: f64,
}

/// A directed, nonzero entry of the combined interaction measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub target: usize,
    pub mu: f64,
    /// Signed contribution of each layer (indexed by [`RelationKind::index`]);
    /// sums to `mu`.
    pub by_layer: [f64; 4],
}

/// One month of the signed multi-relation firm graph. Immutable once built.
///
/// Firms are kept in lexicographic order and addressed internally by index,
/// so every derived quantity is independent of record insertion order.
#[derive(Debug, Clone)]
pub struct GraphSnapshot {
    month: Month,
    firms: Vec<FirmId>,
    index: HashMap<FirmId, usize>,
    /// Per layer, keyed by (src, dst); symmetric layers use `src < dst`.
    layers: [BTreeMap<(usize, usize), LayerEdge>; 4],
    weights: LayerWeights,
    out: Vec<Vec<Channel>>,
}

type RawLayers = [BTreeMap<(usize, usize), f64>; 4];

impl GraphSnapshot {
    /// Builds a snapshot from one month of edge records.
    ///
    /// Duplicate `(src, dst, kind)` records are summed with their signs;
    /// symmetric layers treat `(a, b)` and `(b, a)` as the same relation.
    pub fn build(
        month: Month,
        edges: &[EdgeRecord],
        cpc: Option<&[CpcProfile]>,
        weights: &LayerWeights,
    ) -> Result<Self, GraphError> {
        weights.validate()?;
        let mut names: BTreeSet<FirmId> = BTreeSet::new();
        for e in edges {
            if e.month != month {
                return Err(GraphError::MixedMonth(month, e.month));
            }
            e.validate()?;
            names.insert(e.src.clone());
            names.insert(e.dst.clone());
        }
        for p in cpc.unwrap_or_default() {
            names.insert(p.firm.clone());
        }
        let firms: Vec<FirmId> = names.into_iter().collect();
        let index: HashMap<FirmId, usize> = firms
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();

        let mut raw: RawLayers = Default::default();
        for e in edges {
            let key = layer_key(e.kind, index[&e.src], index[&e.dst]);
            *raw[e.kind.index()].entry(key).or_insert(0.0) += e.sign.as_f64() * e.weight;
        }
        let layers = raw.map(|layer| {
            let max = layer.values().fold(0.0_f64, |m, w| m.max(w.abs()));
            layer
                .into_iter()
                .map(|(k, net)| {
                    let weight = net.abs();
                    let normalized = if max > 0.0 { weight / max } else { 0.0 };
                    (
                        k,
                        LayerEdge {
                            weight,
                            sign: Sign::of(net),
                            normalized,
                        },
                    )
                })
                .collect()
        });
        Ok(Self::assemble(month, firms, index, layers, *weights))
    }

    fn assemble(
        month: Month,
        firms: Vec<FirmId>,
        index: HashMap<FirmId, usize>,
        layers: [BTreeMap<(usize, usize), LayerEdge>; 4],
        weights: LayerWeights,
    ) -> Self {
        let w = weights.as_array();
        let mut pairs: BTreeMap<(usize, usize), [f64; 4]> = BTreeMap::new();
        for kind in RelationKind::ALL {
            let k = kind.index();
            for (&(s, d), e) in &layers[k] {
                let c = w[k] * e.sign.as_f64() * e.normalized;
                pairs.entry((s, d)).or_insert([0.0; 4])[k] += c;
                if !kind.is_directed() {
                    pairs.entry((d, s)).or_insert([0.0; 4])[k] += c;
                }
            }
        }
        let mut out: Vec<Vec<Channel>> = vec![Vec::new(); firms.len()];
        for ((s, d), by_layer) in pairs {
            let mu: f64 = by_layer.iter().sum();
            if mu != 0.0 {
                out[s].push(Channel {
                    target: d,
                    mu,
                    by_layer,
                });
            }
        }
        Self {
            month,
            firms,
            index,
            layers,
            weights,
            out,
        }
    }

    pub fn empty(month: Month) -> Self {
        Self::assemble(
            month,
            Vec::new(),
            HashMap::new(),
            Default::default(),
            LayerWeights::default(),
        )
    }

    pub fn month(&self) -> Month {
        self.month
    }

    /// Firms in lexicographic order.
    pub fn firms(&self) -> &[FirmId] {
        &self.firms
    }

    pub fn len(&self) -> usize {
        self.firms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firms.is_empty()
    }

    pub fn weights(&self) -> &LayerWeights {
        &self.weights
    }

    pub fn contains(&self, firm: &FirmId) -> bool {
        self.index.contains_key(firm)
    }

    pub fn index_of(&self, firm: &FirmId) -> Option<usize> {
        self.index.get(firm).copied()
    }

    pub fn firm(&self, idx: usize) -> &FirmId {
        &self.firms[idx]
    }

    fn require(&self, firm: &FirmId) -> Result<usize, GraphError> {
        self.index_of(firm)
            .ok_or_else(|| GraphError::UnknownFirm(firm.clone()))
    }

    /// Signed interaction `mu(i, j)`; zero for unconnected pairs.
    pub fn interaction(&self, i: &FirmId, j: &FirmId) -> Result<f64, GraphError> {
        let (a, b) = (self.require(i)?, self.require(j)?);
        Ok(self.mu_at(a, b))
    }

    pub fn mu_at(&self, i: usize, j: usize) -> f64 {
        self.channel(i, j).map_or(0.0, |c| c.mu)
    }

    pub fn channel(&self, i: usize, j: usize) -> Option<&Channel> {
        let row = &self.out[i];
        row.binary_search_by_key(&j, |c| c.target)
            .ok()
            .map(|p| &row[p])
    }

    /// Outgoing nonzero channels of firm `i`, ordered by target index.
    pub fn channels(&self, i: usize) -> &[Channel] {
        &self.out[i]
    }

    /// Raw aggregated weight and sign of a single-layer relation between
    /// `i` and `j` (orientation matters only for supply chain).
    pub fn relation(&self, i: usize, j: usize, kind: RelationKind) -> Option<(f64, Sign)> {
        self.layers[kind.index()]
            .get(&layer_key(kind, i, j))
            .map(|e| (e.weight, e.sign))
    }

    /// Relation kinds linking `i` and `j` in either direction.
    pub fn relations_between(&self, i: usize, j: usize) -> Vec<RelationKind> {
        RelationKind::ALL
            .into_iter()
            .filter(|&k| self.relation(i, j, k).is_some() || self.relation(j, i, k).is_some())
            .collect()
    }

    /// Layer entries as `(src, dst, weight, sign)`, symmetric layers once
    /// with `src < dst`.
    pub fn layer_entries(
        &self,
        kind: RelationKind,
    ) -> impl Iterator<Item = (usize, usize, f64, Sign)> + '_ {
        self.layers[kind.index()]
            .iter()
            .map(|(&(s, d), e)| (s, d, e.weight, e.sign))
    }

    pub fn layer_len(&self, kind: RelationKind) -> usize {
        self.layers[kind.index()].len()
    }

    /// Number of stored relations across all layers.
    pub fn edge_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// Firms reachable from `seeds` within `k` undirected hops over nonzero
    /// `mu` entries, seeds included.
    pub fn k_hop_neighborhood(
        &self,
        seeds: &BTreeSet<FirmId>,
        k: usize,
    ) -> Result<BTreeSet<FirmId>, GraphError> {
        let mut undirected: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.len()];
        for (s, row) in self.out.iter().enumerate() {
            for c in row {
                undirected[s].insert(c.target);
                undirected[c.target].insert(s);
            }
        }
        let mut depth: Vec<Option<usize>> = vec![None; self.len()];
        let mut queue = VecDeque::new();
        for f in seeds {
            let i = self.require(f)?;
            depth[i] = Some(0);
            queue.push_back(i);
        }
        while let Some(i) = queue.pop_front() {
            let d = depth[i].expect("queued nodes have a depth");
            if d == k {
                continue;
            }
            for &j in &undirected[i] {
                if depth[j].is_none() {
                    depth[j] = Some(d + 1);
                    queue.push_back(j);
                }
            }
        }
        Ok(depth
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_some())
            .map(|(i, _)| self.firms[i].clone())
            .collect())
    }

    /// Copy of the snapshot with one relation layer removed and `mu`
    /// recombined. The firm set is unchanged.
    pub fn ablate_relation(&self, kind: RelationKind) -> GraphSnapshot {
        let mut layers = self.layers.clone();
        layers[kind.index()].clear();
        Self::assemble(
            self.month,
            self.firms.clone(),
            self.index.clone(),
            layers,
            self.weights,
        )
    }

    /// The aggregated relations as edge records, sorted by
    /// `(src, dst, relation)`. Rebuilding from these reproduces the snapshot.
    pub fn to_records(&self) -> Vec<EdgeRecord> {
        let mut out = Vec::with_capacity(self.edge_count());
        for kind in RelationKind::ALL {
            for (s, d, weight, sign) in self.layer_entries(kind) {
                out.push(EdgeRecord {
                    month: self.month,
                    src: self.firms[s].clone(),
                    dst: self.firms[d].clone(),
                    kind,
                    weight,
                    sign,
                });
            }
        }
        out.sort_by(|a, b| {
            (&a.src, &a.dst, a.kind.as_str()).cmp(&(&b.src, &b.dst, b.kind.as_str()))
        });
        out
    }
}

fn layer_key(kind: RelationKind, s: usize, d: usize) -> (usize, usize) {
    if kind.is_directed() || s < d {
        (s, d)
    } else {
        (d, s)
    }
}

/// Snapshots keyed by month; lookups are exact-match only.
#[derive(Debug, Clone, Default)]
pub struct GraphSeries {
    snapshots: BTreeMap<Month, GraphSnapshot>,
}

impl GraphSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, snapshot: GraphSnapshot) -> Result<(), GraphError> {
        let m = snapshot.month();
        if self.snapshots.contains_key(&m) {
            return Err(GraphError::DuplicateMonth(m));
        }
        self.snapshots.insert(m, snapshot);
        Ok(())
    }

    /// Groups records by month and builds one snapshot per month. CPC
    /// profiles, when given, contribute firms to every month.
    pub fn from_records(
        records: &[EdgeRecord],
        cpc: Option<&[CpcProfile]>,
        weights: &LayerWeights,
    ) -> Result<Self, GraphError> {
        let mut by_month: BTreeMap<Month, Vec<EdgeRecord>> = BTreeMap::new();
        for r in records {
            by_month.entry(r.month).or_default().push(r.clone());
        }
        let mut series = Self::new();
        for (m, recs) in by_month {
            series.insert(GraphSnapshot::build(m, &recs, cpc, weights)?)?;
        }
        Ok(series)
    }

    pub fn get(&self, month: Month) -> Option<&GraphSnapshot> {
        self.snapshots.get(&month)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn months(&self) -> impl Iterator<Item = Month> + '_ {
        self.snapshots.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GraphSnapshot> {
        self.snapshots.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn month() -> Month {
        "2021-06".parse().unwrap()
    }

    fn rec(s: &str, d: &str, kind: RelationKind, w: f64) -> EdgeRecord {
        EdgeRecord::new(month(), s, d, kind, w, Sign::Positive).unwrap()
    }

    fn fid(s: &str) -> FirmId {
        FirmId::new(s).unwrap()
    }

    #[test]
    fn empty_edge_list_gives_empty_snapshot() {
        let s = GraphSnapshot::build(month(), &[], None, &LayerWeights::default()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.edge_count(), 0);
    }

    #[test]
    fn single_supply_edge_normalizes_to_one() {
        let w = LayerWeights::uniform(1.0);
        let s = GraphSnapshot::build(
            month(),
            &[rec("A", "B", RelationKind::SupplyChain, 10.0)],
            None,
            &w,
        )
        .unwrap();
        assert_eq!(s.interaction(&fid("A"), &fid("B")).unwrap(), 1.0);
        assert_eq!(s.interaction(&fid("B"), &fid("A")).unwrap(), 0.0);
        assert_eq!(s.interaction(&fid("A"), &fid("A")).unwrap(), 0.0);
    }

    /// Two layers on (A,B), each normalized to 0.5 by a twice-as-heavy (C,D)
    /// edge in the same layer.
    fn two_layer_snapshot() -> GraphSnapshot {
        let w = LayerWeights {
            technical: 0.5,
            supply_chain: 0.5,
            leadership: 0.0,
            fund_holding: 0.0,
        };
        GraphSnapshot::build(
            month(),
            &[
                rec("A", "B", RelationKind::Technical, 1.0),
                rec("C", "D", RelationKind::Technical, 2.0),
                rec("A", "B", RelationKind::SupplyChain, 5.0),
                rec("C", "D", RelationKind::SupplyChain, 10.0),
            ],
            None,
            &w,
        )
        .unwrap()
    }

    #[test]
    fn weighted_layer_sum() {
        let s = two_layer_snapshot();
        assert!((s.interaction(&fid("A"), &fid("B")).unwrap() - 0.5).abs() < 1e-12);
        // only the symmetric technical layer flows back
        assert!((s.interaction(&fid("B"), &fid("A")).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ablation_recombines() {
        let s = two_layer_snapshot();
        let a = s.ablate_relation(RelationKind::Technical);
        assert!((a.interaction(&fid("A"), &fid("B")).unwrap() - 0.25).abs() < 1e-12);
        assert!((s.interaction(&fid("A"), &fid("B")).unwrap() - 0.5).abs() < 1e-12);
        let absent = s.ablate_relation(RelationKind::Leadership);
        for i in 0..s.len() {
            assert_eq!(absent.channels(i), s.channels(i));
        }
    }

    #[test]
    fn ablating_only_layer_zeroes_mu() {
        let s = GraphSnapshot::build(
            month(),
            &[rec("A", "B", RelationKind::Leadership, 2.0)],
            None,
            &LayerWeights::default(),
        )
        .unwrap();
        let a = s.ablate_relation(RelationKind::Leadership);
        assert_eq!(a.len(), 2);
        assert_eq!(a.interaction(&fid("A"), &fid("B")).unwrap(), 0.0);
        assert_eq!(a.interaction(&fid("B"), &fid("A")).unwrap(), 0.0);
    }

    #[test]
    fn mixed_months_rejected() {
        let other = EdgeRecord::new(
            "2021-07".parse().unwrap(),
            "A",
            "B",
            RelationKind::Leadership,
            1.0,
            Sign::Positive,
        )
        .unwrap();
        assert!(matches!(
            GraphSnapshot::build(month(), &[other], None, &LayerWeights::default()),
            Err(GraphError::MixedMonth(..))
        ));
    }

    #[test]
    fn negative_layer_weight_rejected() {
        let mut w = LayerWeights::default();
        w.leadership = -0.1;
        assert!(matches!(
            GraphSnapshot::build(month(), &[], None, &w),
            Err(GraphError::BadConfig(_))
        ));
    }

    #[test]
    fn unknown_firm() {
        let s = two_layer_snapshot();
        assert!(matches!(
            s.interaction(&fid("A"), &fid("ZZ")),
            Err(GraphError::UnknownFirm(_))
        ));
    }

    #[test]
    fn duplicates_sum_and_symmetric_orientation_merges() {
        let w = LayerWeights::uniform(1.0);
        let s = GraphSnapshot::build(
            month(),
            &[
                rec("A", "B", RelationKind::FundHolding, 1.0),
                rec("B", "A", RelationKind::FundHolding, 2.0),
                rec("C", "D", RelationKind::FundHolding, 6.0),
            ],
            None,
            &w,
        )
        .unwrap();
        assert_eq!(s.layer_len(RelationKind::FundHolding), 2);
        assert!((s.interaction(&fid("B"), &fid("A")).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_sign_propagates() {
        let s = GraphSnapshot::build(
            month(),
            &[EdgeRecord::new(
                month(),
                "A",
                "B",
                RelationKind::Technical,
                0.4,
                Sign::Negative,
            )
            .unwrap()],
            None,
            &LayerWeights::uniform(1.0),
        )
        .unwrap();
        assert_eq!(s.interaction(&fid("A"), &fid("B")).unwrap(), -1.0);
        assert_eq!(s.interaction(&fid("B"), &fid("A")).unwrap(), -1.0);
    }

    #[test]
    fn k_hop_on_chain() {
        let s = GraphSnapshot::build(
            month(),
            &[
                rec("A", "B", RelationKind::SupplyChain, 1.0),
                rec("B", "C", RelationKind::SupplyChain, 1.0),
            ],
            None,
            &LayerWeights::default(),
        )
        .unwrap();
        let seeds: BTreeSet<FirmId> = [fid("A")].into();
        let names = |set: BTreeSet<FirmId>| {
            set.into_iter()
                .map(|f| f.as_str().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(names(s.k_hop_neighborhood(&seeds, 0).unwrap()), ["A"]);
        assert_eq!(names(s.k_hop_neighborhood(&seeds, 1).unwrap()), ["A", "B"]);
        assert_eq!(
            names(s.k_hop_neighborhood(&seeds, 2).unwrap()),
            ["A", "B", "C"]
        );
        // undirected: C reaches back to A
        let from_c: BTreeSet<FirmId> = [fid("C")].into();
        assert_eq!(names(s.k_hop_neighborhood(&from_c, 2).unwrap()).len(), 3);
        let bad: BTreeSet<FirmId> = [fid("Q")].into();
        assert!(s.k_hop_neighborhood(&bad, 1).is_err());
    }

    #[test]
    fn cpc_firms_join_the_firm_set() {
        let p = CpcProfile::new(fid("Z"), [("A01".to_string(), 1u64)]).unwrap();
        let s = GraphSnapshot::build(month(), &[], Some(&[p]), &LayerWeights::default()).unwrap();
        assert_eq!(s.firms(), &[fid("Z")]);
    }

    #[test]
    fn series_rejects_duplicate_month() {
        let mut series = GraphSeries::new();
        series.insert(GraphSnapshot::empty(month())).unwrap();
        assert!(series.insert(GraphSnapshot::empty(month())).is_err());
        assert!(series.get(month()).is_some());
        assert!(series.get(month().succ()).is_none());
    }
}
