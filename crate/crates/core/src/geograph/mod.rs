//! Heterogeneous geo-graph: POI and query nodes joined by query-click,
//! origin-to-destination, and co-location edges.
//!
//! Building is single-writer through [`GraphBuilder`]; [`GraphBuilder::freeze`]
//! produces an immutable [`HeteroGraph`] with one CSR adjacency per edge type.

mod io;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dgg::{self, CellId, DggError, LatLng, MultiLevelCode};

pub use io::{read_clicks, read_pois, read_sessions};
pub use snapshot::{load_snapshot, save_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

pub const FIELD_SEPARATOR: &str = "[SEP]";

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate poi id {0:?}")]
    DuplicatePoi(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Dgg(#[from] DggError),
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("snapshot version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("snapshot checksum mismatch")]
    Checksum,
    #[error("malformed snapshot: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Poi,
    Query,
}

impl NodeType {
    pub const ALL: [NodeType; 2] = [NodeType::Poi, NodeType::Query];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            NodeType::Poi => "POI",
            NodeType::Query => "QUERY",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "POI" => Some(NodeType::Poi),
            "QUERY" => Some(NodeType::Query),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    QcP,
    OtD,
    PcP,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::QcP, EdgeType::OtD, EdgeType::PcP];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_directed(self) -> bool {
        self == EdgeType::OtD
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::QcP => "qcp",
            EdgeType::OtD => "otd",
            EdgeType::PcP => "pcp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    #[serde(deserialize_with = "io::id_string")]
    pub poi_id: String,
    pub name: String,
    pub address: String,
    #[serde(rename = "type")]
    pub poi_type: String,
    pub lat: f64,
    pub lng: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "query")]
    pub text: String,
    #[serde(rename = "poi_id", deserialize_with = "io::id_string")]
    pub clicked_poi_id: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    #[serde(deserialize_with = "io::id_list")]
    pub poi_ids: Vec<String>,
}

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub node_id: NodeId,
    pub node_type: NodeType,
    /// POI id, or `query\u{1f}poi_id` for query nodes.
    pub key: String,
    pub text: String,
    pub location: Option<LatLng>,
    pub geocode: Option<MultiLevelCode>,
}

/// POI node text: name, address and type joined by the separator token.
pub fn render_poi_text(name: &str, address: &str, poi_type: &str) -> String {
    format!("{name} {FIELD_SEPARATOR} {address} {FIELD_SEPARATOR} {poi_type}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphConfig {
    pub top_k_queries: usize,
    pub colocation_level: u8,
    pub max_pois_per_cell: usize,
    pub use_qcp: bool,
    pub use_otd: bool,
    pub use_pcp: bool,
    pub seed: u64,
}

crate::config::kv_config!(GraphConfig { top_k_queries, colocation_level, max_pois_per_cell, use_qcp, use_otd, use_pcp, seed });

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            top_k_queries: 4,
            colocation_level: 15,
            max_pois_per_cell: 256,
            use_qcp: true,
            use_otd: true,
            use_pcp: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub pois: usize,
    pub queries: usize,
    pub clicks_skipped: usize,
    pub session_pairs_skipped: usize,
    pub edges: BTreeMap<String, usize>,
}

/// Compressed adjacency for one edge type.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Csr {
    offsets: Vec<u32>,
    targets: Vec<NodeId>,
}

impl Csr {
    fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (NodeId, NodeId)>) -> Self {
        let mut lists: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (a, b) in pairs {
            lists[a as usize].push(b);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            targets.extend(l);
            offsets.push(targets.len() as u32);
        }
        Self { offsets, targets }
    }

    pub(crate) fn from_parts(offsets: Vec<u32>, targets: Vec<NodeId>) -> Result<Self, GraphError> {
        if offsets.first() != Some(&0) || *offsets.last().unwrap() as usize != targets.len() {
            return Err(GraphError::Format("csr offsets".into()));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(GraphError::Format("csr offsets not monotone".into()));
        }
        Ok(Self { offsets, targets })
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        let v = v as usize;
        &self.targets[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    pub fn entries(&self) -> usize {
        self.targets.len()
    }

    pub(crate) fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub(crate) fn targets(&self) -> &[NodeId] {
        &self.targets
    }

    fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.offsets.len().saturating_sub(1)).flat_map(move |v| self.neighbors(v as NodeId).iter().map(move |&u| (v as NodeId, u)))
    }
}

/// Single-writer graph under construction.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    config: GraphConfig,
    nodes: Vec<Node>,
    poi_index: HashMap<String, NodeId>,
    undirected: [BTreeSet<(NodeId, NodeId)>; 3],
    directed: BTreeSet<(NodeId, NodeId)>,
    stats: IngestStats,
}

impl GraphBuilder {
    pub fn new(config: GraphConfig) -> Self {
        Self { config, ..Default::default() }
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn poi_node(&self, poi_id: &str) -> Option<NodeId> {
        self.poi_index.get(poi_id).copied()
    }

    /// One POI node per record, carrying its level-22 geocode.
    pub fn ingest_pois<I: IntoIterator<Item = PoiRecord>>(&mut self, records: I) -> Result<usize, GraphError> {
        let mut added = 0;
        for r in records {
            if r.name.trim().is_empty() {
                return Err(GraphError::InvalidRecord(format!("poi {:?} has an empty name", r.poi_id)));
            }
            if self.poi_index.contains_key(&r.poi_id) {
                return Err(GraphError::DuplicatePoi(r.poi_id));
            }
            let location = LatLng::new(r.lat, r.lng)?;
            let id = self.nodes.len() as NodeId;
            self.nodes.push(Node {
                node_id: id,
                node_type: NodeType::Poi,
                key: r.poi_id.clone(),
                text: render_poi_text(&r.name, &r.address, &r.poi_type),
                location: Some(location),
                geocode: Some(dgg::geocode_point(location)),
            });
            self.poi_index.insert(r.poi_id, id);
            added += 1;
        }
        self.stats.pois += added;
        Ok(added)
    }

    /// Keeps the top-k distinct queries per POI (count descending, text
    /// ascending on ties) and links each to its POI.
    pub fn ingest_clicks<I: IntoIterator<Item = QueryRecord>>(&mut self, records: I) -> Result<usize, GraphError> {
        let k = self.config.top_k_queries;
        let mut per_poi: BTreeMap<NodeId, HashMap<String, u64>> = BTreeMap::new();
        for r in records {
            if r.count == 0 {
                return Err(GraphError::InvalidRecord(format!("query {:?} has zero count", r.text)));
            }
            let Some(&poi) = self.poi_index.get(&r.clicked_poi_id) else {
                self.stats.clicks_skipped += 1;
                continue;
            };
            *per_poi.entry(poi).or_default().entry(r.text).or_default() += r.count;
        }
        let mut added = 0;
        for (poi, counts) in per_poi {
            let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            for (text, _) in ranked.into_iter().take(k) {
                let key = format!("{text}\u{1f}{}", self.nodes[poi as usize].key);
                let id = self.nodes.len() as NodeId;
                self.nodes.push(Node { node_id: id, node_type: NodeType::Query, key, text, location: None, geocode: None });
                if self.config.use_qcp {
                    self.undirected[EdgeType::QcP.index()].insert((id.min(poi), id.max(poi)));
                }
                added += 1;
            }
        }
        self.stats.queries += added;
        Ok(added)
    }

    /// Directed edges between adjacent POIs of each session.
    pub fn ingest_sessions<I: IntoIterator<Item = SessionRecord>>(&mut self, records: I) -> usize {
        let before = self.directed.len();
        for s in records {
            for w in s.poi_ids.windows(2) {
                let (Some(&a), Some(&b)) = (self.poi_index.get(&w[0]), self.poi_index.get(&w[1])) else {
                    self.stats.session_pairs_skipped += 1;
                    continue;
                };
                if a != b && self.config.use_otd {
                    self.directed.insert((a, b));
                }
            }
        }
        self.directed.len() - before
    }

    /// Links POIs sharing a cell at the configured level. Cells with more
    /// than `max_pois_per_cell` POIs link each POI to that many random
    /// cellmates instead of forming a full clique.
    pub fn build_colocation(&mut self) -> usize {
        if !self.config.use_pcp {
            return 0;
        }
        let level = self.config.colocation_level;
        let mut cells: BTreeMap<CellId, Vec<NodeId>> = BTreeMap::new();
        for n in &self.nodes {
            if let Some(loc) = n.location {
                let cell = CellId::from_latlng(loc, level).expect("validated level");
                cells.entry(cell).or_default().push(n.node_id);
            }
        }
        let cap = self.config.max_pois_per_cell;
        let edges = &mut self.undirected[EdgeType::PcP.index()];
        let before = edges.len();
        for (cell, members) in cells {
            if members.len() <= cap.max(1) || cap == 0 {
                for (i, &a) in members.iter().enumerate() {
                    for &b in &members[i + 1..] {
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ cell.id());
                for (i, &a) in members.iter().enumerate() {
                    for j in sample(&mut rng, members.len() - 1, cap) {
                        let b = members[if j >= i { j + 1 } else { j }];
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        edges.len() - before
    }

    pub fn freeze(mut self) -> HeteroGraph {
        let n = self.nodes.len();
        let sym = |set: &BTreeSet<(NodeId, NodeId)>| Csr::from_pairs(n, set.iter().flat_map(|&(a, b)| [(a, b), (b, a)]));
        let qcp = sym(&self.undirected[EdgeType::QcP.index()]);
        let pcp = sym(&self.undirected[EdgeType::PcP.index()]);
        let otd = Csr::from_pairs(n, self.directed.iter().copied());
        self.stats.edges = BTreeMap::from([
            ("qcp".to_string(), self.undirected[EdgeType::QcP.index()].len()),
            ("otd".to_string(), self.directed.len()),
            ("pcp".to_string(), self.undirected[EdgeType::PcP.index()].len()),
        ]);
        HeteroGraph::from_parts(self.nodes, [qcp, otd, pcp], self.config, self.stats)
    }
}

/// Immutable heterogeneous graph; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    nodes: Vec<Node>,
    /// QcP and PcP symmetric, OtD outgoing.
    adjacency: [Csr; 3],
    /// OtD neighbours in either direction, used for walking.
    otd_either: Csr,
    poi_index: HashMap<String, NodeId>,
    config: GraphConfig,
    stats: IngestStats,
}

impl HeteroGraph {
    pub(crate) fn from_parts(nodes: Vec<Node>, adjacency: [Csr; 3], config: GraphConfig, stats: IngestStats) -> Self {
        let n = nodes.len();
        let otd = &adjacency[EdgeType::OtD.index()];
        let otd_either = Csr::from_pairs(n, otd.pairs().flat_map(|(a, b)| [(a, b), (b, a)]));
        let poi_index = nodes.iter().filter(|n| n.node_type == NodeType::Poi).map(|n| (n.key.clone(), n.node_id)).collect();
        Self { nodes, adjacency, otd_either, poi_index, config, stats }
    }

    /// Builds a graph from the three input streams in one call.
    pub fn build(
        config: GraphConfig,
        pois: impl IntoIterator<Item = PoiRecord>,
        clicks: impl IntoIterator<Item = QueryRecord>,
        sessions: impl IntoIterator<Item = SessionRecord>,
    ) -> Result<Self, GraphError> {
        let mut b = GraphBuilder::new(config);
        b.ingest_pois(pois)?;
        b.ingest_clicks(clicks)?;
        b.ingest_sessions(sessions);
        b.build_colocation();
        Ok(b.freeze())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn csr(&self, t: EdgeType) -> &Csr {
        &self.adjacency[t.index()]
    }

    /// Stored neighbours: symmetric for QcP/PcP, outgoing for OtD.
    pub fn neighbors(&self, v: NodeId, t: EdgeType) -> &[NodeId] {
        self.adjacency[t.index()].neighbors(v)
    }

    /// Neighbours reachable by a walk step over edge type `t`; OtD edges are
    /// traversed in both directions.
    pub fn walk_neighbors(&self, v: NodeId, t: EdgeType) -> &[NodeId] {
        match t {
            EdgeType::OtD => self.otd_either.neighbors(v),
            _ => self.adjacency[t.index()].neighbors(v),
        }
    }

    /// Logical edge count: undirected edges once, directed edges once.
    pub fn edge_count(&self, t: EdgeType) -> usize {
        let entries = self.adjacency[t.index()].entries();
        if t.is_directed() {
            entries
        } else {
            entries / 2
        }
    }

    /// Each logical edge once: `(src, dst)` with `src < dst` for undirected types.
    pub fn edges(&self, t: EdgeType) -> Vec<(NodeId, NodeId)> {
        self.adjacency[t.index()].pairs().filter(|&(a, b)| t.is_directed() || a < b).collect()
    }

    pub fn poi_node(&self, poi_id: &str) -> Option<NodeId> {
        self.poi_index.get(poi_id).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn poi(id: &str, lat: f64, lng: f64) -> PoiRecord {
        PoiRecord {
            poi_id: id.into(),
            name: format!("Poi {id}"),
            address: format!("{id} Road"),
            poi_type: "Shop".into(),
            lat,
            lng,
        }
    }

    fn click(q: &str, p: &str, count: u64) -> QueryRecord {
        QueryRecord { text: q.into(), clicked_poi_id: p.into(), count }
    }

    #[test]
    fn poi_text_rendering() {
        let mut b = GraphBuilder::new(GraphConfig::default());
        b.ingest_pois([PoiRecord {
            poi_id: "01".into(),
            name: "Yizi Food (Suzhou) Co.".into(),
            address: "No.1, Songxiang, Suzhou Industrial Park, Suzhou, Jiangsu Province".into(),
            poi_type: "Company".into(),
            lat: 31.3,
            lng: 120.7,
        }])
        .unwrap();
        let n = &b.nodes()[0];
        assert_eq!(
            n.text,
            "Yizi Food (Suzhou) Co. [SEP] No.1, Songxiang, Suzhou Industrial Park, Suzhou, Jiangsu Province [SEP] Company"
        );
        assert!(n.geocode.is_some() && n.location.is_some());
    }

    #[test]
    fn empty_and_duplicate_pois() {
        let mut b = GraphBuilder::new(GraphConfig::default());
        assert_eq!(b.ingest_pois(Vec::new()).unwrap(), 0);
        assert!(b.freeze().is_empty());
        let mut b = GraphBuilder::new(GraphConfig::default());
        let err = b.ingest_pois([poi("a", 1.0, 1.0), poi("a", 2.0, 2.0)]).unwrap_err();
        assert!(matches!(err, GraphError::DuplicatePoi(_)));
        let mut b = GraphBuilder::new(GraphConfig::default());
        assert!(matches!(b.ingest_pois([poi("a", 95.0, 1.0)]), Err(GraphError::Dgg(_))));
    }

    #[test]
    fn top_k_queries_by_count() {
        let mut b = GraphBuilder::new(GraphConfig::default());
        b.ingest_pois([poi("p", 30.0, 120.0)]).unwrap();
        let counts = [("q9", 9), ("q7", 7), ("q5", 5), ("q3", 3), ("q2", 2), ("q1", 1)];
        b.ingest_clicks(counts.iter().map(|(q, c)| click(q, "p", *c))).unwrap();
        let g = b.freeze();
        let texts: Vec<_> = g.nodes().iter().filter(|n| n.node_type == NodeType::Query).map(|n| n.text.as_str()).collect();
        assert_eq!(texts, ["q9", "q7", "q5", "q3"]);
        assert_eq!(g.edge_count(EdgeType::QcP), 4);
        assert_eq!(g.neighbors(0, EdgeType::QcP), &[1, 2, 3, 4]);
    }

    #[test]
    fn ties_break_lexicographically_and_k_zero() {
        let mut b = GraphBuilder::new(GraphConfig { top_k_queries: 2, ..Default::default() });
        b.ingest_pois([poi("p", 30.0, 120.0)]).unwrap();
        b.ingest_clicks([click("zz", "p", 3), click("aa", "p", 3), click("mm", "p", 3), click("ghost", "nope", 5)]).unwrap();
        assert_eq!(b.stats().clicks_skipped, 1);
        let texts: Vec<_> = b.nodes()[1..].iter().map(|n| n.text.clone()).collect();
        assert_eq!(texts, ["aa", "mm"]);

        let mut b = GraphBuilder::new(GraphConfig { top_k_queries: 0, ..Default::default() });
        b.ingest_pois([poi("p", 30.0, 120.0)]).unwrap();
        assert_eq!(b.ingest_clicks([click("a", "p", 1)]).unwrap(), 0);
    }

    #[test]
    fn same_query_text_for_two_pois_is_two_nodes() {
        let mut b = GraphBuilder::new(GraphConfig::default());
        b.ingest_pois([poi("p", 30.0, 120.0), poi("r", 31.0, 121.0)]).unwrap();
        b.ingest_clicks([click("coffee", "p", 2), click("coffee", "r", 2)]).unwrap();
        let g = b.freeze();
        let q: Vec<_> = g.nodes().iter().filter(|n| n.node_type == NodeType::Query).collect();
        assert_eq!(q.len(), 2);
        assert_ne!(q[0].key, q[1].key);
        assert_eq!(g.neighbors(q[0].node_id, EdgeType::QcP), &[0]);
        assert_eq!(g.neighbors(q[1].node_id, EdgeType::QcP), &[1]);
    }

    #[test]
    fn sessions_slide_a_two_gram_window() {
        let mut b = GraphBuilder::new(GraphConfig::default());
        b.ingest_pois([poi("A", 30.0, 120.0), poi("B", 31.0, 121.0), poi("C", 32.0, 122.0)]).unwrap();
        let s = |ids: &[&str]| SessionRecord { poi_ids: ids.iter().map(|s| s.to_string()).collect() };
        b.ingest_sessions([s(&["A", "B", "C"]), s(&["A"]), s(&["A", "B", "A"]), s(&["A", "X"])]);
        assert_eq!(b.stats().session_pairs_skipped, 1);
        let g = b.freeze();
        assert_eq!(g.edges(EdgeType::OtD), vec![(0, 1), (1, 0), (1, 2)]);
        assert_eq!(g.neighbors(2, EdgeType::OtD), &[] as &[NodeId]);
        assert_eq!(g.walk_neighbors(2, EdgeType::OtD), &[1]);
    }

    #[test]
    fn colocation_cliques() {
        let mut b = GraphBuilder::new(GraphConfig::default());
        b.ingest_pois([poi("a", 31.30000, 120.70000), poi("b", 31.30001, 120.70001), poi("c", 31.30002, 120.70000), poi("far", 39.9, 116.4)])
            .unwrap();
        assert_eq!(b.build_colocation(), 3);
        let g = b.freeze();
        assert_eq!(g.neighbors(3, EdgeType::PcP).len(), 0);
        assert_eq!(g.neighbors(0, EdgeType::PcP), &[1, 2]);
    }

    #[test]
    fn clique_cap_bounds_degree() {
        let cfg = GraphConfig { max_pois_per_cell: 3, ..Default::default() };
        let mut b = GraphBuilder::new(cfg);
        let pois: Vec<_> = (0..20).map(|i| poi(&format!("p{i}"), 31.3 + i as f64 * 1e-7, 120.7)).collect();
        b.ingest_pois(pois).unwrap();
        b.build_colocation();
        let g = b.freeze();
        for v in 0..20 {
            let d = g.neighbors(v, EdgeType::PcP).len();
            assert!(d >= 3, "node {v} degree {d}");
        }
        assert!(g.edge_count(EdgeType::PcP) < 20 * 19 / 2);
    }

    #[test]
    fn edge_type_flags_drop_edges() {
        let cfg = GraphConfig { use_qcp: false, use_otd: false, use_pcp: false, ..Default::default() };
        let mut b = GraphBuilder::new(cfg);
        b.ingest_pois([poi("a", 31.3, 120.7), poi("b", 31.3, 120.7)]).unwrap();
        b.ingest_clicks([click("x", "a", 1)]).unwrap();
        b.ingest_sessions([SessionRecord { poi_ids: vec!["a".into(), "b".into()] }]);
        b.build_colocation();
        let g = b.freeze();
        assert_eq!(g.len(), 3);
        for t in EdgeType::ALL {
            assert_eq!(g.edge_count(t), 0);
        }
    }
}
