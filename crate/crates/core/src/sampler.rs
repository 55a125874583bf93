//! Weighted random walks over the heterogeneous graph.
//!
//! A step from `v` assigns neighbour `u` reached over edge type `t` the mass
//! `lambda_t / |N_t(v)|`. Masses of a neighbour reachable over several types
//! add up, and the whole map is divided by the sum of `lambda_t` over the
//! types present at `v`, so it always sums to one.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgg::MultiLevelCode;
use crate::geograph::{EdgeType, HeteroGraph, NodeId, NodeType};

/// Separator between nodes on a corpus line.
pub const NODE_SEPARATOR: char = '\u{23d0}';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Number of sampled steps after the start node.
    pub walk_length: usize,
    pub lambda_qcp: f64,
    pub lambda_otd: f64,
    pub lambda_pcp: f64,
    pub seed: u64,
}

crate::config::kv_config!(WalkConfig { walk_length, lambda_qcp, lambda_otd, lambda_pcp, seed });

impl Default for WalkConfig {
    fn default() -> Self {
        // start + 9 steps = 10 nodes per document when no dead end is hit
        Self { walk_length: 9, lambda_qcp: 0.5, lambda_otd: 0.25, lambda_pcp: 0.25, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WalkConfigError {
    #[error("walk length must be at least 1")]
    WalkLength,
    #[error("edge weights must be finite and non-negative with a positive sum")]
    Lambdas,
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), WalkConfigError> {
        if self.walk_length < 1 {
            return Err(WalkConfigError::WalkLength);
        }
        let l = self.lambdas();
        if l.iter().any(|x| !x.is_finite() || *x < 0.0) || l.iter().sum::<f64>() <= 0.0 {
            return Err(WalkConfigError::Lambdas);
        }
        Ok(())
    }

    pub fn lambda(&self, t: EdgeType) -> f64 {
        self.lambdas()[t.index()]
    }

    fn lambdas(&self) -> [f64; 3] {
        [self.lambda_qcp, self.lambda_otd, self.lambda_pcp]
    }
}

/// Exact next-node distribution from `v`, sorted by node id. Empty when `v`
/// has no neighbour with positive weight.
pub fn transition_distribution(graph: &HeteroGraph, v: NodeId, cfg: &WalkConfig) -> Vec<(NodeId, f64)> {
    let mut mass: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut present = 0.0;
    for t in EdgeType::ALL {
        let ns = graph.walk_neighbors(v, t);
        let lambda = cfg.lambda(t);
        if ns.is_empty() || lambda <= 0.0 {
            continue;
        }
        present += lambda;
        let share = lambda / ns.len() as f64;
        for &u in ns {
            *mass.entry(u).or_default() += share;
        }
    }
    mass.into_iter().map(|(u, m)| (u, m / present)).collect()
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG stream for the walk starting at `start`; independent of scheduling.
pub fn walk_rng(seed: u64, start: NodeId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(start as u64 + 1)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkDocument {
    pub start_id: NodeId,
    pub node_ids: Vec<NodeId>,
}

fn draw(dist: &[(NodeId, f64)], rng: &mut impl Rng) -> NodeId {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for &(u, p) in dist {
        acc += p;
        if x < acc {
            return u;
        }
    }
    dist[dist.len() - 1].0
}

/// One transition from `v`, or `None` at a dead end.
pub fn step<R: Rng>(graph: &HeteroGraph, v: NodeId, cfg: &WalkConfig, rng: &mut R) -> Option<NodeId> {
    let dist = transition_distribution(graph, v, cfg);
    (!dist.is_empty()).then(|| draw(&dist, rng))
}

/// One walk of at most `walk_length` steps; stops early at a dead end.
pub fn sample_walk(graph: &HeteroGraph, start: NodeId, cfg: &WalkConfig) -> WalkDocument {
    let mut rng = walk_rng(cfg.seed, start);
    let mut node_ids = vec![start];
    let mut v = start;
    for _ in 0..cfg.walk_length {
        let Some(u) = step(graph, v, cfg, &mut rng) else { break };
        v = u;
        node_ids.push(v);
    }
    WalkDocument { start_id: start, node_ids }
}

/// One walk per node, in node order. Walks run in parallel.
pub fn sample_corpus(graph: &HeteroGraph, cfg: &WalkConfig) -> Vec<WalkDocument> {
    (0..graph.len() as NodeId).into_par_iter().map(|v| sample_walk(graph, v, cfg)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub nodes: usize,
    pub mean_length: f64,
}

impl CorpusStats {
    pub fn of(docs: &[WalkDocument]) -> Self {
        let nodes: usize = docs.iter().map(|d| d.node_ids.len()).sum();
        let mean_length = if docs.is_empty() { 0.0 } else { nodes as f64 / docs.len() as f64 };
        Self { documents: docs.len(), nodes, mean_length }
    }
}

/// Samples one walk per node and streams the rendered documents to `sink`.
pub fn generate_corpus<W: Write>(graph: &HeteroGraph, cfg: &WalkConfig, mut sink: W) -> io::Result<CorpusStats> {
    let docs = sample_corpus(graph, cfg);
    for d in &docs {
        writeln!(sink, "{}", render_document(graph, d).to_line())?;
    }
    sink.flush()?;
    Ok(CorpusStats::of(&docs))
}

/// A node as it appears in the corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusNode {
    pub node_type: NodeType,
    pub text: String,
    pub geocode: Option<MultiLevelCode>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusDocument {
    pub nodes: Vec<CorpusNode>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn clean(text: &str) -> String {
    text.chars().map(|c| if c == '\t' || c == '\n' || c == '\r' || c == NODE_SEPARATOR { ' ' } else { c }).collect()
}

pub fn render_document(graph: &HeteroGraph, doc: &WalkDocument) -> CorpusDocument {
    CorpusDocument {
        nodes: doc
            .node_ids
            .iter()
            .map(|&id| {
                let n = graph.node(id);
                CorpusNode { node_type: n.node_type, text: n.text.clone(), geocode: n.geocode }
            })
            .collect(),
    }
}

impl CorpusDocument {
    /// `TYPE\ttext\tgeocode` per node, nodes joined by the separator.
    /// Tabs, newlines and separators inside texts become spaces.
    pub fn to_line(&self) -> String {
        let mut sep = [0u8; 4];
        let sep = NODE_SEPARATOR.encode_utf8(&mut sep);
        self.nodes
            .iter()
            .map(|n| format!("{}\t{}\t{}", n.node_type.tag(), clean(&n.text), n.geocode.map(|g| g.to_string()).unwrap_or_default()))
            .collect::<Vec<_>>()
            .join(sep)
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, CorpusError> {
        let bad = |msg: String| CorpusError::Malformed { line: line_no, msg };
        let mut nodes = Vec::new();
        for part in line.split(NODE_SEPARATOR) {
            let fields: Vec<&str> = part.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let node_type = NodeType::from_tag(fields[0]).ok_or_else(|| bad(format!("unknown node type {:?}", fields[0])))?;
            let geocode = if fields[2].is_empty() {
                None
            } else {
                Some(fields[2].parse::<MultiLevelCode>().map_err(|e| bad(e.to_string()))?)
            };
            nodes.push(CorpusNode { node_type, text: fields[1].to_string(), geocode });
        }
        Ok(Self { nodes })
    }
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusDocument>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(CorpusDocument::parse_line(&line, i + 1)?);
    }
    Ok(out)
}
