//! Buyer → seller exposure graph built from in-experiment interactions.
//!
//! Storage is compressed sparse rows keyed by seller: each outcome unit owns
//! a contiguous run of `(buyer index, interaction count, weight)` edges,
//! sorted by buyer. Both unit lists are sorted lexicographically, which
//! fixes the index order used by every downstream vector.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AssignmentTable, InteractionEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w_ir` is buyer r's share of all interactions seller i received.
    #[default]
    CountProportional,
    /// Repeat interactions collapse; every distinct buyer gets `1/deg_i`.
    BinaryDedup,
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::CountProportional => "count_proportional",
            Weighting::BinaryDedup => "binary_dedup",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphBuildConfig {
    pub weighting: Weighting,
    pub kinds: BTreeSet<String>,
}

impl GraphBuildConfig {
    pub fn new<I, S>(weighting: Weighting, kinds: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let kinds: BTreeSet<String> = kinds.into_iter().map(Into::into).collect();
        if kinds.is_empty() {
            return Err(Error::InvalidArgument("graph kind filter is empty".into()));
        }
        Ok(Self { weighting, kinds })
    }
}

/// Events that could not become edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounts {
    pub used_events: u64,
    pub unassigned_events: u64,
    pub unassigned_buyers: u64,
    pub kind_excluded_events: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    weighting: Weighting,
    buyers: Vec<String>,
    sellers: Vec<String>,
    offsets: Vec<usize>,
    edge_buyer: Vec<u32>,
    edge_count: Vec<u32>,
    edge_weight: Vec<f64>,
}

/// One weighted edge as seen from its outcome unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub buyer: usize,
    pub count: u32,
    pub weight: f64,
}

impl BipartiteGraph {
    /// Assembles a graph from `(seller, buyer, count)` triples. Triples must
    /// be unique per pair with positive counts.
    fn from_counts(weighting: Weighting, mut triples: Vec<(&str, &str, u32)>) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::EmptyGraph);
        }
        triples.sort_unstable();

        let buyers: Vec<String> = triples
            .iter()
            .map(|t| t.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        let buyer_index: HashMap<&str, u32> = buyers
            .iter()
            .enumerate()
            .map(|(i, b)| (b.as_str(), i as u32))
            .collect();

        let mut sellers = Vec::new();
        let mut offsets = vec![0];
        let mut edge_buyer = Vec::with_capacity(triples.len());
        let mut edge_count = Vec::with_capacity(triples.len());
        for (seller, buyer, count) in &triples {
            if sellers.last().map(String::as_str) != Some(*seller) {
                if !sellers.is_empty() {
                    offsets.push(edge_buyer.len());
                }
                sellers.push(seller.to_string());
            }
            edge_buyer.push(buyer_index[buyer]);
            edge_count.push(*count);
        }
        offsets.push(edge_buyer.len());

        let mut graph = Self {
            weighting,
            buyers,
            sellers,
            offsets,
            edge_buyer,
            edge_count,
            edge_weight: Vec::new(),
        };
        graph.recompute_weights();
        Ok(graph)
    }

    fn recompute_weights(&mut self) {
        let mut weights = Vec::with_capacity(self.edge_count.len());
        for i in 0..self.sellers.len() {
            let range = self.offsets[i]..self.offsets[i + 1];
            let counts = &self.edge_count[range];
            match self.weighting {
                Weighting::CountProportional => {
                    let total: u64 = counts.iter().map(|&c| c as u64).sum();
                    weights.extend(counts.iter().map(|&c| c as f64 / total as f64));
                }
                Weighting::BinaryDedup => {
                    let w = 1.0 / counts.len() as f64;
                    weights.extend(counts.iter().map(|_| w));
                }
            }
        }
        self.edge_weight = weights;
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    /// Number of outcome units (sellers), `n`.
    pub fn n_outcomes(&self) -> usize {
        self.sellers.len()
    }

    /// Number of diversion units (buyers) with at least one edge, `m`.
    pub fn n_diversion(&self) -> usize {
        self.buyers.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_buyer.len()
    }

    pub fn outcome_ids(&self) -> &[String] {
        &self.sellers
    }

    pub fn diversion_ids(&self) -> &[String] {
        &self.buyers
    }

    pub fn outcome_index(&self, seller: &str) -> Option<usize> {
        self.sellers
            .binary_search_by(|s| s.as_str().cmp(seller))
            .ok()
    }

    pub fn degree(&self, seller: usize) -> usize {
        self.offsets[seller + 1] - self.offsets[seller]
    }

    pub fn edges(&self, seller: usize) -> impl ExactSizeIterator<Item = Edge> + '_ {
        let range = self.offsets[seller]..self.offsets[seller + 1];
        range.map(move |e| Edge {
            buyer: self.edge_buyer[e] as usize,
            count: self.edge_count[e],
            weight: self.edge_weight[e],
        })
    }

    /// Raw CSR view: `(offsets, buyer indices, weights)`.
    pub fn csr(&self) -> (&[usize], &[u32], &[f64]) {
        (&self.offsets, &self.edge_buyer, &self.edge_weight)
    }

    /// Sum of squared weights per outcome unit.
    pub fn squared_weight_sums(&self) -> Vec<f64> {
        (0..self.n_outcomes())
            .map(|i| crate::numeric::sum(self.edges(i).map(|e| e.weight * e.weight)))
            .collect()
    }

    /// Writes `seller_id,buyer_id,weight` rows, seller then buyer order.
    pub fn write_audit<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "seller_id,buyer_id,weight")?;
        for (i, seller) in self.sellers.iter().enumerate() {
            for e in self.edges(i) {
                writeln!(w, "{seller},{},{}", self.buyers[e.buyer], e.weight)?;
            }
        }
        w.flush()
    }
}

/// Builds the exposure graph from interaction events.
///
/// Events whose kind is outside `config.kinds` or whose buyer has no
/// assignment are skipped and tallied in the returned counts.
pub fn build_graph(
    events: &[InteractionEvent],
    assignments: &AssignmentTable,
    config: &GraphBuildConfig,
) -> Result<(BipartiteGraph, BuildCounts)> {
    let mut counts = BuildCounts::default();
    let mut pairs: HashMap<(&str, &str), u32> = HashMap::new();
    let mut unassigned: BTreeSet<&str> = BTreeSet::new();
    for e in events {
        if !config.kinds.contains(&e.event_kind) {
            counts.kind_excluded_events += 1;
            continue;
        }
        if assignments.variant_of(&e.buyer_id).is_none() {
            counts.unassigned_events += 1;
            unassigned.insert(&e.buyer_id);
            continue;
        }
        counts.used_events += 1;
        *pairs
            .entry((e.seller_id.as_str(), e.buyer_id.as_str()))
            .or_insert(0) += 1;
    }
    counts.unassigned_buyers = unassigned.len() as u64;
    if counts.unassigned_events > 0 {
        log::warn!(
            "excluded {} events from {} unassigned buyers",
            counts.unassigned_events,
            counts.unassigned_buyers
        );
    }
    let triples = pairs.into_iter().map(|((s, b), c)| (s, b, c)).collect();
    let graph = BipartiteGraph::from_counts(config.weighting, triples)?;
    Ok((graph, counts))
}

/// Restricts the graph to buyers in the `control` and `treatment` arms and
/// renormalizes each seller's weights over the edges that remain. Sellers
/// left without edges are dropped.
pub fn per_variant_subgraphs(
    graph: &BipartiteGraph,
    assignments: &AssignmentTable,
    control: &str,
    treatment: &str,
) -> Result<BipartiteGraph> {
    if control == treatment {
        return Err(Error::InvalidArgument(
            "control and treatment variants must differ".into(),
        ));
    }
    let keep = [
        assignments.variant_index(control)?,
        assignments.variant_index(treatment)?,
    ];
    let kept_buyer: Vec<bool> = graph
        .buyers
        .iter()
        .map(|b| {
            assignments
                .variant_of(b)
                .is_some_and(|v| keep.contains(&v))
        })
        .collect();

    let mut triples = Vec::new();
    for (i, seller) in graph.sellers.iter().enumerate() {
        for e in graph.edges(i) {
            if kept_buyer[e.buyer] {
                triples.push((seller.as_str(), graph.buyers[e.buyer].as_str(), e.count));
            }
        }
    }
    BipartiteGraph::from_counts(graph.weighting, triples)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_outcomes: usize,
    pub n_diversion: usize,
    pub n_edges: usize,
    pub n_interactions: u64,
    /// distinct-buyer degree → number of sellers
    pub outcome_degree_histogram: BTreeMap<usize, usize>,
    /// distinct-seller degree → number of buyers
    pub diversion_degree_histogram: BTreeMap<usize, usize>,
    pub isolated_outcomes: usize,
    pub isolated_diversion: usize,
}

pub fn graph_stats(graph: &BipartiteGraph) -> GraphStats {
    let mut outcome_hist = BTreeMap::new();
    for i in 0..graph.n_outcomes() {
        *outcome_hist.entry(graph.degree(i)).or_insert(0) += 1;
    }
    let mut buyer_degree = vec![0usize; graph.n_diversion()];
    for &b in &graph.edge_buyer {
        buyer_degree[b as usize] += 1;
    }
    let mut diversion_hist = BTreeMap::new();
    for &d in &buyer_degree {
        *diversion_hist.entry(d).or_insert(0) += 1;
    }
    GraphStats {
        n_outcomes: graph.n_outcomes(),
        n_diversion: graph.n_diversion(),
        n_edges: graph.n_edges(),
        n_interactions: graph.edge_count.iter().map(|&c| c as u64).sum(),
        isolated_outcomes: outcome_hist.get(&0).copied().unwrap_or(0),
        isolated_diversion: diversion_hist.get(&0).copied().unwrap_or(0),
        outcome_degree_histogram: outcome_hist,
        diversion_degree_histogram: diversion_hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DesignFile, VariantSpec};

    pub(crate) fn ev(buyer: &str, seller: &str) -> InteractionEvent {
        InteractionEvent {
            buyer_id: buyer.into(),
            seller_id: seller.into(),
            event_kind: "view".into(),
            timestamp_ms: 0,
        }
    }

    fn three_arm(assign: &[(&str, &str)]) -> AssignmentTable {
        let third = 1.0 / 3.0;
        let mut t = AssignmentTable::new(DesignFile {
            variants: vec![
                VariantSpec { label: "Off".into(), probability: third, control: true },
                VariantSpec { label: "A".into(), probability: third, control: false },
                VariantSpec { label: "B".into(), probability: 1.0 - 2.0 * third, control: false },
            ],
        })
        .unwrap();
        for (b, v) in assign {
            t.assign(b, v).unwrap();
        }
        t
    }

    fn views(w: Weighting) -> GraphBuildConfig {
        GraphBuildConfig::new(w, ["view"]).unwrap()
    }

    fn fixture_events() -> Vec<InteractionEvent> {
        // seller s: a x1, b x2, c x3
        let mut v = vec![ev("a", "s")];
        v.extend(std::iter::repeat_with(|| ev("b", "s")).take(2));
        v.extend(std::iter::repeat_with(|| ev("c", "s")).take(3));
        v
    }

    #[test]
    fn count_weights_are_interaction_shares() {
        let t = three_arm(&[("a", "Off"), ("b", "A"), ("c", "B")]);
        let (g, counts) = build_graph(&fixture_events(), &t, &views(Weighting::CountProportional)).unwrap();
        let w: Vec<f64> = g.edges(0).map(|e| e.weight).collect();
        assert_eq!(w, vec![1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]);
        assert_eq!(counts.used_events, 6);
    }

    #[test]
    fn dedup_weights_are_uniform() {
        let t = three_arm(&[("a", "Off"), ("b", "A"), ("c", "B")]);
        let (g, _) = build_graph(&fixture_events(), &t, &views(Weighting::BinaryDedup)).unwrap();
        let w: Vec<f64> = g.edges(0).map(|e| e.weight).collect();
        assert_eq!(w, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn single_buyer_gets_unit_weight() {
        let t = three_arm(&[("a", "A")]);
        let events = vec![ev("a", "s"), ev("a", "s")];
        let (g, _) = build_graph(&events, &t, &views(Weighting::CountProportional)).unwrap();
        assert_eq!(g.edges(0).collect::<Vec<_>>(), vec![Edge { buyer: 0, count: 2, weight: 1.0 }]);
    }

    #[test]
    fn unassigned_buyers_are_excluded_and_counted() {
        let t = three_arm(&[("a", "A")]);
        let events = vec![ev("a", "s"), ev("ghost", "s"), ev("ghost", "t")];
        let (g, counts) = build_graph(&events, &t, &views(Weighting::CountProportional)).unwrap();
        assert_eq!(g.n_outcomes(), 1);
        assert_eq!(counts.unassigned_events, 2);
        assert_eq!(counts.unassigned_buyers, 1);
    }

    #[test]
    fn empty_graph_is_an_error() {
        let t = three_arm(&[("a", "A")]);
        assert!(matches!(
            build_graph(&[ev("ghost", "s")], &t, &views(Weighting::CountProportional)),
            Err(Error::EmptyGraph)
        ));
        let fav = GraphBuildConfig::new(Weighting::CountProportional, ["favorite"]).unwrap();
        assert!(matches!(build_graph(&[ev("a", "s")], &t, &fav), Err(Error::EmptyGraph)));
    }

    #[test]
    fn restriction_renormalizes_shares() {
        let t = three_arm(&[("a", "Off"), ("b", "A"), ("c", "B"), ("d", "B")]);
        let mut events = fixture_events();
        events.push(ev("d", "only_b"));
        let (g, _) = build_graph(&events, &t, &views(Weighting::CountProportional)).unwrap();
        let sub = per_variant_subgraphs(&g, &t, "Off", "A").unwrap();
        // hand computed from the raw counts: Off 1, A 2 → 1/3, 2/3
        assert_eq!(sub.outcome_ids(), &["s".to_string()]);
        let w: Vec<f64> = sub.edges(0).map(|e| e.weight).collect();
        assert_eq!(w, vec![1.0 / 3.0, 2.0 / 3.0]);
        assert!(per_variant_subgraphs(&g, &t, "A", "A").is_err());
        assert!(per_variant_subgraphs(&g, &t, "Off", "Z").is_err());
    }

    #[test]
    fn restricting_to_all_variants_is_identity() {
        let mut t = AssignmentTable::new(DesignFile {
            variants: vec![
                VariantSpec { label: "Off".into(), probability: 0.5, control: true },
                VariantSpec { label: "On".into(), probability: 0.5, control: false },
            ],
        })
        .unwrap();
        t.assign("a", "Off").unwrap();
        t.assign("b", "On").unwrap();
        let events = vec![ev("a", "s"), ev("b", "s"), ev("b", "t"), ev("a", "u")];
        let (g, _) = build_graph(&events, &t, &views(Weighting::CountProportional)).unwrap();
        assert_eq!(per_variant_subgraphs(&g, &t, "Off", "On").unwrap(), g);
    }

    #[test]
    fn stats_degree_histogram() {
        let t = three_arm(&[("a", "A"), ("b", "B")]);
        let events = vec![ev("a", "s1"), ev("a", "s2"), ev("a", "s3"), ev("b", "s3")];
        let (g, _) = build_graph(&events, &t, &views(Weighting::CountProportional)).unwrap();
        let s = graph_stats(&g);
        assert_eq!(s.outcome_degree_histogram, BTreeMap::from([(1, 2), (2, 1)]));
        assert_eq!(s.diversion_degree_histogram, BTreeMap::from([(1, 1), (3, 1)]));
        assert_eq!(s.n_edges, 4);
        assert_eq!(s.isolated_outcomes, 0);
    }

    #[test]
    fn audit_dump_is_sorted() {
        let t = three_arm(&[("a", "A"), ("b", "B")]);
        let events = vec![ev("b", "z"), ev("a", "z"), ev("b", "y")];
        let (g, _) = build_graph(&events, &t, &views(Weighting::CountProportional)).unwrap();
        let mut out = Vec::new();
        g.write_audit(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "seller_id,buyer_id,weight\ny,b,1\nz,a,0.5\nz,b,0.5\n"
        );
    }
}
