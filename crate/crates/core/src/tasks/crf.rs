//! Linear-chain CRF over per-word emissions. The negative log-likelihood
//! enters the tape as one scalar op whose Jacobians are the marginals from
//! forward-backward minus the gold indicators.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{entity_f1, EntityF1};
use super::{train_loop, FineTuneConfig, Label, LabeledSequence, TaskError, TextEncoder};
use crate::geograph::NodeType;
use crate::masker::MaskedExample;
use crate::model::{Batch, Model};
use crate::numerics::{Graph, Mat, ParamId, ParameterStore, Var};

const CHUNK: usize = 64;

/// BIO tags over chunk types: `O`, then `B-t`, `I-t` for each type in
/// sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    types: Vec<String>,
}

impl TagSet {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> Self {
        let set: BTreeSet<String> = types.into_iter().map(Into::into).collect();
        Self { types: set.into_iter().collect() }
    }

    /// Chunk types named by the `B-`/`I-` tags of the given sequences.
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(tags.into_iter().filter_map(|t| t.strip_prefix("B-").or_else(|| t.strip_prefix("I-"))).filter(|k| !k.is_empty()))
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, i: usize) -> String {
        match i {
            0 => "O".to_string(),
            _ => format!("{}-{}", if i % 2 == 1 { "B" } else { "I" }, self.types[(i - 1) / 2]),
        }
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        if tag == "O" {
            return Some(0);
        }
        let (p, kind) = tag.split_once('-')?;
        let k = self.types.binary_search_by(|t| t.as_str().cmp(kind)).ok()?;
        match p {
            "B" => Some(1 + 2 * k),
            "I" => Some(2 + 2 * k),
            _ => None,
        }
    }
}

/// Transition, start and stop scores over `T` tags.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `transitions[[i, j]]` scores tag `i` followed by tag `j`.
    pub transitions: Mat,
    pub start: Mat,
    pub stop: Mat,
}

impl CrfParams {
    pub fn zeros(tags: usize) -> Self {
        Self { transitions: Array2::zeros((tags, tags)), start: Array2::zeros((1, tags)), stop: Array2::zeros((1, tags)) }
    }

    pub fn tags(&self) -> usize {
        self.start.ncols()
    }

    fn check(&self, emissions: &Mat) -> Result<(), TaskError> {
        let t = self.tags();
        if self.transitions.dim() != (t, t) || self.stop.dim() != (1, t) || self.start.nrows() != 1 {
            return Err(TaskError::TagSet(format!("inconsistent CRF shapes {:?} {:?} {:?}", self.transitions.dim(), self.start.dim(), self.stop.dim())));
        }
        if emissions.ncols() != t {
            return Err(TaskError::TagSet(format!("emissions have {} tags, CRF has {t}", emissions.ncols())));
        }
        if emissions.nrows() == 0 {
            return Err(TaskError::TagSet("empty sequence".into()));
        }
        Ok(())
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn crf_path_score(emissions: &Mat, p: &CrfParams, path: &[usize]) -> f64 {
    let mut s = p.start[[0, path[0]]] + p.stop[[0, path[path.len() - 1]]];
    for (i, &y) in path.iter().enumerate() {
        s += emissions[[i, y]];
        if i > 0 {
            s += p.transitions[[path[i - 1], y]];
        }
    }
    s
}

/// Forward log-scores: `alpha[[i, j]]` sums over paths ending in `j` at `i`.
fn forward(em: &Mat, p: &CrfParams) -> Mat {
    let (l, t) = em.dim();
    let mut alpha = Array2::zeros((l, t));
    for j in 0..t {
        alpha[[0, j]] = p.start[[0, j]] + em[[0, j]];
    }
    for i in 1..l {
        for j in 0..t {
            alpha[[i, j]] = logsumexp((0..t).map(|k| alpha[[i - 1, k]] + p.transitions[[k, j]])) + em[[i, j]];
        }
    }
    alpha
}

/// Backward log-scores: `beta[[i, j]]` sums over continuations after `j`
/// at `i`, stop score included.
fn backward(em: &Mat, p: &CrfParams) -> Mat {
    let (l, t) = em.dim();
    let mut beta = Array2::zeros((l, t));
    for j in 0..t {
        beta[[l - 1, j]] = p.stop[[0, j]];
    }
    for i in (0..l - 1).rev() {
        for k in 0..t {
            beta[[i, k]] = logsumexp((0..t).map(|j| p.transitions[[k, j]] + em[[i + 1, j]] + beta[[i + 1, j]]));
        }
    }
    beta
}

/// Log partition function by the forward algorithm.
pub fn crf_log_partition(emissions: &Mat, p: &CrfParams) -> Result<f64, TaskError> {
    p.check(emissions)?;
    let alpha = forward(emissions, p);
    let last = alpha.nrows() - 1;
    Ok(logsumexp((0..p.tags()).map(|j| alpha[[last, j]] + p.stop[[0, j]])))
}

/// Gradients of the negative log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGrads {
    pub emissions: Mat,
    pub transitions: Mat,
    pub start: Mat,
    pub stop: Mat,
}

/// `log Z - score(gold)` and its gradient.
pub fn crf_nll(emissions: &Mat, p: &CrfParams, gold: &[usize]) -> Result<(f64, CrfGrads), TaskError> {
    p.check(emissions)?;
    let (l, t) = emissions.dim();
    if gold.len() != l || gold.iter().any(|&y| y >= t) {
        return Err(TaskError::TagSet(format!("gold path {gold:?} does not fit {l} positions of {t} tags")));
    }
    let alpha = forward(emissions, p);
    let beta = backward(emissions, p);
    let log_z = logsumexp((0..t).map(|j| alpha[[l - 1, j]] + p.stop[[0, j]]));
    let mut g = CrfGrads { emissions: Array2::zeros((l, t)), transitions: Array2::zeros((t, t)), start: Array2::zeros((1, t)), stop: Array2::zeros((1, t)) };
    for i in 0..l {
        for j in 0..t {
            g.emissions[[i, j]] = (alpha[[i, j]] + beta[[i, j]] - log_z).exp();
        }
    }
    for i in 0..l - 1 {
        for k in 0..t {
            for j in 0..t {
                g.transitions[[k, j]] += (alpha[[i, k]] + p.transitions[[k, j]] + emissions[[i + 1, j]] + beta[[i + 1, j]] - log_z).exp();
            }
        }
    }
    g.start.row_mut(0).assign(&g.emissions.row(0));
    g.stop.row_mut(0).assign(&g.emissions.row(l - 1));
    for (i, &y) in gold.iter().enumerate() {
        g.emissions[[i, y]] -= 1.0;
        if i > 0 {
            g.transitions[[gold[i - 1], y]] -= 1.0;
        }
    }
    g.start[[0, gold[0]]] -= 1.0;
    g.stop[[0, gold[l - 1]]] -= 1.0;
    Ok((log_z - crf_path_score(emissions, p, gold), g))
}

/// Best path and its score. Ties go to the lower tag index.
pub fn viterbi(emissions: &Mat, p: &CrfParams) -> Result<(Vec<usize>, f64), TaskError> {
    p.check(emissions)?;
    let (l, t) = emissions.dim();
    let mut score = Array2::zeros((l, t));
    let mut back = Array2::<usize>::zeros((l, t));
    for j in 0..t {
        score[[0, j]] = p.start[[0, j]] + emissions[[0, j]];
    }
    for i in 1..l {
        for j in 0..t {
            let (best, s) = (0..t).map(|k| (k, score[[i - 1, k]] + p.transitions[[k, j]])).fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            score[[i, j]] = s + emissions[[i, j]];
            back[[i, j]] = best;
        }
    }
    let (mut y, best) = (0..t).map(|j| (j, score[[l - 1, j]] + p.stop[[0, j]])).fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let mut path = vec![0; l];
    for i in (0..l).rev() {
        path[i] = y;
        y = back[[i, y]];
    }
    Ok((path, best))
}

/// The NLL as a tape node over emissions, transitions, start and stop.
pub fn crf_loss(g: &mut Graph, emissions: Var, transitions: Var, start: Var, stop: Var, gold: &[usize]) -> Result<Var, TaskError> {
    let p = CrfParams { transitions: g.value(transitions).clone(), start: g.value(start).clone(), stop: g.value(stop).clone() };
    let (nll, gr) = crf_nll(g.value(emissions), &p, gold)?;
    Ok(g.scalar_op(&[emissions, transitions, start, stop], nll, vec![gr.emissions, gr.transitions, gr.start, gr.stop])?)
}

/// Encoder, per-word emission projection and CRF.
#[derive(Debug, Clone)]
pub struct Tagger {
    pub model: Model,
    pub tags: TagSet,
    emit: (ParamId, ParamId),
    trans: ParamId,
    start: ParamId,
    stop: ParamId,
}

impl Tagger {
    /// Adds a fresh `crf.*` head to the model's store.
    pub fn new(mut model: Model, tags: TagSet, seed: u64) -> Result<Self, TaskError> {
        let (d, t) = (model.config.hidden, tags.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = &mut model.store;
        let emit = (s.add_uniform("crf.emit.w", d, t, model.config.init_std * 3f64.sqrt(), &mut rng)?, s.add_const("crf.emit.b", 1, t, 0.0)?);
        let trans = s.add_const("crf.trans", t, t, 0.0)?;
        let start = s.add_const("crf.start", 1, t, 0.0)?;
        let stop = s.add_const("crf.stop", 1, t, 0.0)?;
        Ok(Self { model, tags, emit, trans, start, stop })
    }

    /// Binds an existing head; its width must match `tags`.
    pub fn from_model(model: Model, tags: TagSet) -> Result<Self, TaskError> {
        let s = &model.store;
        let (emit, trans, start, stop) = ((s.id("crf.emit.w")?, s.id("crf.emit.b")?), s.id("crf.trans")?, s.id("crf.start")?, s.id("crf.stop")?);
        if s.value(trans).dim() != (tags.len(), tags.len()) {
            return Err(TaskError::TagSet(format!("checkpoint has {} tags, tag set has {}", s.value(trans).nrows(), tags.len())));
        }
        Ok(Self { model, tags, emit, trans, start, stop })
    }

    pub fn params(&self) -> CrfParams {
        let s = &self.model.store;
        CrfParams { transitions: s.value(self.trans).clone(), start: s.value(self.start).clone(), stop: s.value(self.stop).clone() }
    }

    /// Per-word emission rows of every node, in the order of `examples`.
    fn emissions(&self, s: &ParameterStore, g: &mut Graph, examples: &[MaskedExample]) -> Result<Vec<Var>, TaskError> {
        let batch = Batch::new(examples, &self.model.config, false)?;
        let x = self.model.encode(s, g, &batch, &mut Vec::new())?;
        let rows: Vec<usize> = batch.node_spans.iter().flat_map(|r| r.start + 1..r.end).collect();
        let ctx = g.rows(x, &rows)?;
        let (w, b) = (g.param(s, self.emit.0), g.param(s, self.emit.1));
        let y = g.matmul(ctx, w)?;
        let all = g.add_row(y, b)?;
        let mut out = Vec::with_capacity(batch.nodes());
        let mut offset = 0;
        for (i, span) in batch.node_spans.iter().enumerate() {
            let n = span.len() - 1;
            if n == 0 {
                return Err(TaskError::Example { index: i, msg: "no words to tag".into() });
            }
            out.push(g.rows(all, &(offset..offset + n).collect::<Vec<_>>())?);
            offset += n;
        }
        Ok(out)
    }

    /// Viterbi tags per word. Words past the model's length limit get `O`.
    pub fn decode(&self, examples: &[MaskedExample]) -> Result<Vec<Vec<String>>, TaskError> {
        let p = self.params();
        let mut out = Vec::with_capacity(examples.len());
        for part in examples.chunks(CHUNK) {
            let mut g = Graph::new();
            let em = self.emissions(&self.model.store, &mut g, part)?;
            for (ex, e) in part.iter().zip(em) {
                let (path, _) = viterbi(g.value(e), &p)?;
                let words = ex.nodes[0].input_ids.len() - 1;
                let mut tags: Vec<String> = path.iter().map(|&y| self.tags.name(y)).collect();
                tags.resize(words, "O".to_string());
                out.push(tags);
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, enc: &TextEncoder, data: &[LabeledSequence]) -> Result<EntityF1, TaskError> {
        let (examples, gold) = tag_examples(enc, data)?;
        let pred = self.decode(&examples)?;
        Ok(entity_f1(&gold, &pred))
    }
}

fn tag_examples(enc: &TextEncoder, data: &[LabeledSequence]) -> Result<(Vec<MaskedExample>, Vec<Vec<String>>), TaskError> {
    if data.is_empty() {
        return Err(TaskError::EmptyDataset);
    }
    let mut examples = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    for (index, d) in data.iter().enumerate() {
        let Label::Tags(tags) = &d.label else {
            return Err(TaskError::Example { index, msg: "expected a tag sequence".into() });
        };
        let words = enc.words(&d.text).len();
        if tags.len() != words {
            return Err(TaskError::Example { index, msg: format!("{} tags for {words} words", tags.len()) });
        }
        examples.push(enc.single(NodeType::Query, &d.text));
        gold.push(tags.clone());
    }
    Ok((examples, gold))
}

/// Trains a fresh CRF head over the chunk types found in `data`; returns
/// the tagger and its training-set entity F1.
pub fn finetune_tagger(model: Model, enc: &TextEncoder, data: &[LabeledSequence], cfg: &FineTuneConfig) -> Result<(Tagger, EntityF1), TaskError> {
    let (examples, gold) = tag_examples(enc, data)?;
    let tags = TagSet::from_tags(gold.iter().flatten().map(String::as_str));
    let gold_ids: Vec<Vec<usize>> = gold
        .iter()
        .enumerate()
        .map(|(index, seq)| seq.iter().map(|t| tags.index(t).ok_or_else(|| TaskError::Example { index, msg: format!("malformed tag {t:?}") })).collect())
        .collect::<Result<_, _>>()?;
    let max_words = model.config.max_len - 1;
    let mut tagger = Tagger::new(model, tags, cfg.seed)?;
    let mut store = std::mem::take(&mut tagger.model.store);
    let head = [tagger.emit.0, tagger.emit.1, tagger.trans, tagger.start, tagger.stop];
    train_loop(&mut store, cfg, examples.len(), &head, |g, s, idx| {
        let picked: Vec<MaskedExample> = idx.iter().map(|&i| examples[i].clone()).collect();
        let em = tagger.emissions(s, g, &picked)?;
        let (tr, st, sp) = (g.param(s, tagger.trans), g.param(s, tagger.start), g.param(s, tagger.stop));
        let mut total: Option<Var> = None;
        for (&i, e) in idx.iter().zip(em) {
            let gold = &gold_ids[i][..gold_ids[i].len().min(max_words)];
            let l = crf_loss(g, e, tr, st, sp, gold)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let total = total.expect("batch is not empty");
        Ok(g.scale(total, 1.0 / idx.len() as f64))
    })?;
    tagger.model.store = store;
    let pred = tagger.decode(&examples)?;
    let f1 = entity_f1(&gold, &pred);
    Ok((tagger, f1))
}
