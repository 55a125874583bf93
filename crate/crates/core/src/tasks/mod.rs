//! Fine-tuning heads, metrics and evaluation harnesses for the downstream
//! task shapes: classification, query-POI matching, sequence labeling with
//! a CRF, geocoding, next-POI recommendation and the analogy probe.

mod classify;
mod crf;
mod data;
mod geocode;
mod metrics;
mod retrieval;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::kv_config;
use crate::geograph::NodeType;
use crate::masker::{MaskedExample, MaskedNode, Tokenizer, Vocab, CLS_ID, NO_LABEL};
use crate::model::{batch_indices, ModelError};
use crate::numerics::{AdamConfig, Graph, LinearDecay, NumError, ParamId, ParameterStore, Var};

pub use classify::{finetune_classifier, Classifier};
pub use crf::{crf_log_partition, crf_loss, crf_nll, crf_path_score, finetune_tagger, viterbi, CrfGrads, CrfParams, TagSet, Tagger};
pub use data::{matching_text, read_jsonl, GeocodingRecord, Label, LabeledSequence, RecommendationRecord, Relevance};
pub use geocode::{argmax_code, decode_prediction, finetune_geocoder, GeocodePrediction, Geocoder};
pub use metrics::{acc_at_k, acc_at_n_km, bio_chunks, chunk_f1, entity_f1, haversine_km, Chunk, EntityF1, EARTH_RADIUS_KM};
pub use retrieval::{analogy, rank_by_cosine, Recommender};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("example {index}: {msg}")]
    Example { index: usize, msg: String },
    #[error("tag set mismatch: {0}")]
    TagSet(String),
    #[error("no consistent cell in predicted code {0}")]
    Undecodable(String),
    #[error("gold item {0:?} is not among the candidates")]
    GoldMissing(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NumError> for TaskError {
    fn from(e: NumError) -> Self {
        TaskError::Model(e.into())
    }
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64, n: usize) -> Self {
        Self { metric: metric.to_string(), value, n }
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)
    }
}

/// Turns raw text into model input with the pretraining vocabulary.
#[derive(Clone, Copy)]
pub struct TextEncoder<'a> {
    pub vocab: &'a Vocab,
    pub tokenizer: &'a dyn Tokenizer,
}

impl TextEncoder<'_> {
    pub fn words(&self, text: &str) -> Vec<String> {
        self.tokenizer.split(text)
    }

    /// `[CLS]` followed by the word ids.
    pub fn ids(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![CLS_ID];
        ids.extend(self.words(text).iter().map(|w| self.vocab.id(w)));
        ids
    }

    /// An unmasked node.
    pub fn node(&self, node_type: NodeType, text: &str) -> MaskedNode {
        let input_ids = self.ids(text);
        let n = input_ids.len();
        MaskedNode { node_type, input_ids, actions: vec![None; n], labels: vec![NO_LABEL; n], geocode: None, truncated: false }
    }

    /// A one-node document.
    pub fn single(&self, node_type: NodeType, text: &str) -> MaskedExample {
        MaskedExample { nodes: vec![self.node(node_type, text)] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub steps: u64,
    /// Examples per step.
    pub batch: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    /// When false only the task head is updated.
    pub train_encoder: bool,
    pub seed: u64,
}

kv_config!(FineTuneConfig { steps, batch, lr, warmup_steps, train_encoder, seed });

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self { steps: 300, batch: 16, lr: 1e-3, warmup_steps: 0, train_encoder: true, seed: 0 }
    }
}

/// Adam over `store` on shuffled minibatches of `0..n`, starting from a
/// fresh optimizer state. Returns the loss of every step.
pub(crate) fn train_loop<F>(store: &mut ParameterStore, cfg: &FineTuneConfig, n: usize, head: &[ParamId], mut loss: F) -> Result<Vec<f64>, TaskError>
where
    F: FnMut(&mut Graph, &ParameterStore, &[usize]) -> Result<Var, TaskError>,
{
    if n == 0 {
        return Err(TaskError::EmptyDataset);
    }
    store.reset_optimizer();
    let schedule = LinearDecay { base: cfg.lr, warmup_steps: cfg.warmup_steps, total_steps: cfg.steps };
    let adam = AdamConfig::default();
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let idx = batch_indices(cfg.seed, step, n, cfg.batch.max(1));
        let mut g = Graph::new();
        let l = loss(&mut g, store, &idx)?;
        losses.push(g.scalar(l));
        store.zero_grad();
        g.backward(l).accumulate_into(store);
        if !cfg.train_encoder {
            for id in store.ids().collect::<Vec<_>>() {
                if !head.contains(&id) {
                    store.grad_mut(id).fill(0.0);
                }
            }
        }
        store.adam_step(&adam, schedule.at(step))?;
    }
    Ok(losses)
}
