use std::ops::Range;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{LayerIds, Model, ModelConfig, ModelError, GEO_CLASSES, GEO_POSITIONS, NODE_TYPES};
use crate::dgg::char_class;
use crate::geograph::NodeType;
use crate::masker::{MaskedExample, CLS_ID, NO_LABEL};
use crate::numerics::{Graph, Mat, ParameterStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mlm: f64,
    pub geo: f64,
    /// When false the geocoding head is not evaluated and contributes no
    /// loss term.
    pub geocoding: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mlm: 1.0, geo: 1.0, geocoding: true }
    }
}

/// Documents flattened into one stacked token sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    /// Token rows of each node; the first row is its `[CLS]`.
    pub node_spans: Vec<Range<usize>>,
    pub node_types: Vec<usize>,
    /// Node indices of each document.
    pub doc_spans: Vec<Range<usize>>,
    pub mlm_rows: Vec<usize>,
    pub mlm_labels: Vec<Option<usize>>,
    /// POI nodes with a geocode target, and their 33 classes each.
    pub geo_nodes: Vec<usize>,
    pub geo_labels: Vec<Option<usize>>,
    /// Nodes cut to `max_len` tokens.
    pub truncated: usize,
}

impl Batch {
    /// With `require_geocode`, a POI node without a target is an error;
    /// otherwise such nodes are simply not geocoding targets.
    pub fn new(examples: &[MaskedExample], config: &ModelConfig, require_geocode: bool) -> Result<Self, ModelError> {
        let mut b = Batch::default();
        for ex in examples {
            let first = b.node_spans.len();
            for node in &ex.nodes {
                let idx = b.node_spans.len();
                let ids = &node.input_ids;
                if ids.first() != Some(&CLS_ID) {
                    return Err(ModelError::Config(format!("node {idx} does not start with [CLS]")));
                }
                let n = ids.len().min(config.max_len);
                b.truncated += usize::from(ids.len() > n);
                let start = b.ids.len();
                for (p, &id) in ids[..n].iter().enumerate() {
                    if id as usize >= config.vocab_size {
                        return Err(ModelError::TokenId(id));
                    }
                    b.ids.push(id as usize);
                    b.positions.push(p);
                    let label = node.labels.get(p).copied().unwrap_or(NO_LABEL);
                    if label != NO_LABEL {
                        if label as usize >= config.vocab_size {
                            return Err(ModelError::TokenId(label));
                        }
                        b.mlm_rows.push(start + p);
                        b.mlm_labels.push(Some(label as usize));
                    }
                }
                b.node_spans.push(start..start + n);
                b.node_types.push(node.node_type.index());
                if node.node_type == NodeType::Poi {
                    match node.geocode {
                        Some(code) => {
                            b.geo_nodes.push(idx);
                            b.geo_labels.extend(code.as_bytes().iter().map(|&c| char_class(c)));
                        }
                        None if require_geocode => return Err(ModelError::MissingGeocode(idx)),
                        None => {}
                    }
                }
            }
            if b.node_spans.len() > first {
                b.doc_spans.push(first..b.node_spans.len());
            }
        }
        if b.ids.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        Ok(b)
    }

    pub fn cls_rows(&self) -> Vec<usize> {
        self.node_spans.iter().map(|r| r.start).collect()
    }

    pub fn nodes(&self) -> usize {
        self.node_spans.len()
    }
}

/// Recorded variables of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Encoder output, one row per token.
    pub tokens: Var,
    /// `[CLS]` rows of the encoder output, one per node.
    pub h_cls: Var,
    /// TranSAGE output, one row per node.
    pub h_tilde: Var,
    /// Fusion-layer output, one row per token.
    pub fused: Var,
    /// `[CLS]` rows of the fusion output.
    pub h_hat_cls: Var,
    pub mlm_logits: Option<Var>,
    /// Mean cross-entropy over masked positions; `None` when there are none.
    pub mlm_loss: Option<Var>,
    /// Rows `33p..33p+33` hold the classifiers of the p-th geocoding node.
    pub geo_logits: Option<Var>,
    /// Mean over geocoding nodes of the summed 33 cross-entropies.
    pub geo_loss: Option<Var>,
    pub loss: Var,
    /// Every attention op, for inspection.
    pub attention: Vec<Var>,
}

/// Encoder output of one node in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEncoding {
    pub h_cls: Array1<f64>,
    /// One row per token after `[CLS]`.
    pub h_context: Mat,
    pub truncated: bool,
}

impl Model {
    fn layer(&self, s: &ParameterStore, g: &mut Graph, x: Var, l: &LayerIds, segments: &[Range<usize>]) -> Result<(Var, Var), ModelError> {
        let eps = self.config.ln_eps;
        let lin = |g: &mut Graph, x: Var, (w, b): (_, _)| -> Result<Var, ModelError> {
            let (w, b) = (g.param(s, w), g.param(s, b));
            let y = g.matmul(x, w)?;
            Ok(g.add_row(y, b)?)
        };
        let q = lin(g, x, l.q)?;
        let k = lin(g, x, l.k)?;
        let v = lin(g, x, l.v)?;
        let att = g.segment_attention(q, k, v, segments, self.config.heads)?;
        let o = lin(g, att, l.o)?;
        let r = g.add(x, o)?;
        let (g1, b1) = (g.param(s, l.ln1.0), g.param(s, l.ln1.1));
        let x1 = g.layer_norm(r, g1, b1, eps)?;
        let f = lin(g, x1, l.f1)?;
        let f = g.gelu(f);
        let f = lin(g, f, l.f2)?;
        let r = g.add(x1, f)?;
        let (g2, b2) = (g.param(s, l.ln2.0), g.param(s, l.ln2.1));
        Ok((g.layer_norm(r, g2, b2, eps)?, att))
    }

    /// Token embeddings through the encoder stack.
    pub fn encode(&self, s: &ParameterStore, g: &mut Graph, batch: &Batch, attention: &mut Vec<Var>) -> Result<Var, ModelError> {
        let ly = &self.layout;
        let word = g.param(s, ly.word);
        let mut e = g.embedding_lookup(word, &batch.ids)?;
        if self.config.positional {
            let pos = g.param(s, ly.pos);
            let p = g.embedding_lookup(pos, &batch.positions)?;
            e = g.add(e, p)?;
        }
        let (lg, lb) = (g.param(s, ly.emb_ln.0), g.param(s, ly.emb_ln.1));
        let mut x = g.layer_norm(e, lg, lb, self.config.ln_eps)?;
        for l in &ly.encoder {
            let (y, att) = self.layer(s, g, x, l, &batch.node_spans)?;
            attention.push(att);
            x = y;
        }
        Ok(x)
    }

    /// Type-aware aggregation over the rows of `h`: per head, queries and
    /// keys come from the projection of each row's node type, and the
    /// values are `h` itself. Rows attend within their segment.
    pub fn transage(&self, s: &ParameterStore, g: &mut Graph, h: Var, types: &[usize], segments: &[Range<usize>]) -> Result<(Var, Var), ModelError> {
        let ly = &self.layout;
        if let Some(&t) = types.iter().find(|&&t| t >= NODE_TYPES) {
            return Err(ModelError::Config(format!("unknown node type {t}")));
        }
        let proj = |g: &mut Graph, ids: &[(_, _)]| -> Result<Var, ModelError> {
            let mut per_type = Vec::with_capacity(NODE_TYPES);
            for &(w, b) in ids {
                let (w, b) = (g.param(s, w), g.param(s, b));
                let y = g.matmul(h, w)?;
                per_type.push(g.add_row(y, b)?);
            }
            Ok(g.pick_rows(&per_type, types)?)
        };
        let q = proj(g, &ly.ts_q)?;
        let k = proj(g, &ly.ts_k)?;
        let v = g.concat_cols(&vec![h; self.config.heads])?;
        let att = g.segment_attention(q, k, v, segments, self.config.heads)?;
        let wo = g.param(s, ly.ts_out);
        let mut out = g.matmul(att, wo)?;
        if let Some((lg, lb)) = ly.ts_ln {
            let r = g.add(out, h)?;
            let (lg, lb) = (g.param(s, lg), g.param(s, lb));
            out = g.layer_norm(r, lg, lb, self.config.ln_eps)?;
        }
        Ok((out, att))
    }

    /// Mean cross-entropy of vocabulary logits at `rows` of `context`.
    /// Returns `(logits, loss)`, both `None` when there are no rows.
    pub fn mlm_head(&self, s: &ParameterStore, g: &mut Graph, context: Var, rows: &[usize], labels: &[Option<usize>]) -> Result<(Option<Var>, Option<Var>), ModelError> {
        if rows.is_empty() {
            return Ok((None, None));
        }
        let h = g.rows(context, rows)?;
        let (w, b) = (g.param(s, self.layout.mlm.0), g.param(s, self.layout.mlm.1));
        let y = g.matmul(h, w)?;
        let logits = g.add_row(y, b)?;
        let ce = g.cross_entropy(logits, labels)?;
        Ok((Some(logits), Some(g.scale(ce, 1.0 / rows.len() as f64))))
    }

    /// 33 independent 16-way classifiers over the given node vectors; logits
    /// come back stacked as `(33·n)×16`.
    pub fn geocoding_logits(&self, s: &ParameterStore, g: &mut Graph, h: Var) -> Result<Var, ModelError> {
        let n = g.shape(h).0;
        let w = g.param(s, self.layout.geo);
        let flat = g.matmul(h, w)?;
        Ok(g.reshape(flat, n * GEO_POSITIONS, GEO_CLASSES)?)
    }

    pub fn forward(&self, s: &ParameterStore, g: &mut Graph, batch: &Batch, weights: &LossWeights) -> Result<Forward, ModelError> {
        let mut attention = Vec::new();
        let tokens = self.encode(s, g, batch, &mut attention)?;
        let cls = batch.cls_rows();
        let h_cls = g.rows(tokens, &cls)?;
        let (h_tilde, ts_att) = self.transage(s, g, h_cls, &batch.node_types, &batch.doc_spans)?;
        attention.push(ts_att);

        let mut node_of_row = vec![0; batch.ids.len()];
        let mut is_cls = vec![0; batch.ids.len()];
        for (i, span) in batch.node_spans.iter().enumerate() {
            node_of_row[span.clone()].fill(i);
            is_cls[span.start] = 1;
        }
        let spread = g.rows(h_tilde, &node_of_row)?;
        let fuse_in = g.pick_rows(&[tokens, spread], &is_cls)?;
        let (fused, fuse_att) = self.layer(s, g, fuse_in, &self.layout.fuse, &batch.node_spans)?;
        attention.push(fuse_att);
        let h_hat_cls = g.rows(fused, &cls)?;

        let (mlm_logits, mlm_loss) = self.mlm_head(s, g, fused, &batch.mlm_rows, &batch.mlm_labels)?;
        let (mut geo_logits, mut geo_loss) = (None, None);
        if weights.geocoding && !batch.geo_nodes.is_empty() {
            let h = g.rows(h_hat_cls, &batch.geo_nodes)?;
            let logits = self.geocoding_logits(s, g, h)?;
            let ce = g.cross_entropy(logits, &batch.geo_labels)?;
            geo_logits = Some(logits);
            geo_loss = Some(g.scale(ce, 1.0 / batch.geo_nodes.len() as f64));
        }
        let mut terms = Vec::new();
        if let Some(l) = mlm_loss {
            terms.push(g.scale(l, weights.mlm));
        }
        if let Some(l) = geo_loss {
            terms.push(g.scale(l, weights.geo));
        }
        let loss = match terms.split_first() {
            None => g.input(Array2::zeros((1, 1))),
            Some((&first, rest)) => rest.iter().try_fold(first, |acc, &t| g.add(acc, t))?,
        };
        Ok(Forward { tokens, h_cls, h_tilde, fused, h_hat_cls, mlm_logits, mlm_loss, geo_logits, geo_loss, loss, attention })
    }

    /// Encoder-only representation of one `[CLS]`-prefixed token sequence.
    pub fn encode_node(&self, ids: &[u32]) -> Result<NodeEncoding, ModelError> {
        let ex = single_node(ids);
        let batch = Batch::new(std::slice::from_ref(&ex), &self.config, false)?;
        let mut g = Graph::new();
        let x = self.encode(&self.store, &mut g, &batch, &mut Vec::new())?;
        let v = g.value(x);
        Ok(NodeEncoding { h_cls: v.row(0).to_owned(), h_context: v.slice(ndarray::s![1.., ..]).to_owned(), truncated: batch.truncated > 0 })
    }

    /// `[CLS]` vectors of every node of every example: encoder output
    /// (single-node mode) or fusion output (graph mode).
    pub fn embed(&self, examples: &[MaskedExample], graph_mode: bool) -> Result<Mat, ModelError> {
        let batch = Batch::new(examples, &self.config, false)?;
        let mut g = Graph::new();
        if graph_mode {
            let f = self.forward(&self.store, &mut g, &batch, &LossWeights { geocoding: false, ..Default::default() })?;
            Ok(g.value(f.h_hat_cls).clone())
        } else {
            let x = self.encode(&self.store, &mut g, &batch, &mut Vec::new())?;
            Ok(g.value(x).select(ndarray::Axis(0), &batch.cls_rows()))
        }
    }

    /// Geocoding probabilities (33×16) for every node of every example,
    /// read from the fusion output.
    pub fn geocode_probs(&self, examples: &[MaskedExample]) -> Result<Vec<Mat>, ModelError> {
        let batch = Batch::new(examples, &self.config, false)?;
        let mut g = Graph::new();
        let f = self.forward(&self.store, &mut g, &batch, &LossWeights { geocoding: false, ..Default::default() })?;
        let logits = self.geocoding_logits(&self.store, &mut g, f.h_hat_cls)?;
        let p = g.softmax(logits);
        let all = g.value(p);
        Ok((0..batch.nodes()).map(|i| all.slice(ndarray::s![i * GEO_POSITIONS..(i + 1) * GEO_POSITIONS, ..]).to_owned()).collect())
    }
}

/// An unmasked one-node example (a Query node, so no geocode target).
pub(crate) fn single_node(ids: &[u32]) -> MaskedExample {
    let n = ids.len();
    MaskedExample {
        nodes: vec![crate::masker::MaskedNode {
            node_type: NodeType::Query,
            input_ids: ids.to_vec(),
            actions: vec![None; n],
            labels: vec![NO_LABEL; n],
            geocode: None,
            truncated: false,
        }],
    }
}
