//! Per-node Transformer encoder, type-aware graph aggregation (TranSAGE),
//! a fusion layer, and the MLM and geocoding heads.
//!
//! All nodes of a batch are encoded together as one stacked token matrix;
//! attention is restricted to each node's own rows, so stacking changes no
//! result. TranSAGE then attends across the `[CLS]` vectors of each
//! document, and the fusion layer re-encodes every node with its `[CLS]`
//! row replaced by the aggregated vector.

mod forward;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{kv_config, ConfigError, KvConfig};
use crate::numerics::{Checkpoint, NumError, ParamId, ParameterStore};

pub use forward::{Batch, Forward, LossWeights, NodeEncoding};
pub use train::{batch_indices, evaluate, geocode_accuracy, pretrain, pretrain_until, LossBreakdown, PretrainConfig, PretrainError, PretrainReport, StepLog};

/// Characters per 2Lt3C code, one classifier each.
pub const GEO_POSITIONS: usize = crate::dgg::CODE_LEN;
/// Classes per geocoding classifier.
pub const GEO_CLASSES: usize = 16;
pub const NODE_TYPES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    /// Tokens per node including `[CLS]`.
    pub max_len: usize,
    pub positional: bool,
    /// Residual connection and layer norm around TranSAGE.
    pub transage_residual: bool,
    pub init_std: f64,
    pub ln_eps: f64,
    pub seed: u64,
}

kv_config!(ModelConfig { hidden, layers, heads, ffn, vocab_size, max_len, positional, transage_residual, init_std, ln_eps, seed });

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            vocab_size: 0,
            max_len: 64,
            positional: true,
            transage_residual: false,
            init_std: 0.02,
            ln_eps: 1e-12,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad("hidden must be a positive multiple of heads");
        }
        if self.vocab_size <= crate::masker::SPECIALS.len() {
            return bad("vocab_size must exceed the special tokens");
        }
        if self.max_len < 1 || self.ffn == 0 {
            return bad("max_len and ffn must be positive");
        }
        Ok(())
    }

    /// Per-head width `d = hidden / heads`.
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    ConfigValue(#[from] ConfigError),
    #[error("POI node {0} has no geocode target")]
    MissingGeocode(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("token id {0} outside the vocabulary")]
    TokenId(u32),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIds {
    pub q: (ParamId, ParamId),
    pub k: (ParamId, ParamId),
    pub v: (ParamId, ParamId),
    pub o: (ParamId, ParamId),
    pub ln1: (ParamId, ParamId),
    pub f1: (ParamId, ParamId),
    pub f2: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub word: ParamId,
    pub pos: ParamId,
    pub emb_ln: (ParamId, ParamId),
    pub encoder: Vec<LayerIds>,
    /// Per node type: (Q weight, Q bias), (K weight, K bias).
    pub ts_q: Vec<(ParamId, ParamId)>,
    pub ts_k: Vec<(ParamId, ParamId)>,
    pub ts_out: ParamId,
    pub ts_ln: Option<(ParamId, ParamId)>,
    pub fuse: LayerIds,
    pub mlm: (ParamId, ParamId),
    pub geo: ParamId,
}

/// Network weights and structure.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub(crate) layout: Layout,
}

fn find(store: &ParameterStore, name: &str) -> Result<ParamId, ModelError> {
    Ok(store.id(name)?)
}

fn pair(store: &ParameterStore, base: &str, a: &str, b: &str) -> Result<(ParamId, ParamId), ModelError> {
    Ok((find(store, &format!("{base}.{a}"))?, find(store, &format!("{base}.{b}"))?))
}

fn layer_layout(store: &ParameterStore, base: &str) -> Result<LayerIds, ModelError> {
    let wb = |n: &str| pair(store, &format!("{base}.{n}"), "w", "b");
    let gb = |n: &str| pair(store, &format!("{base}.{n}"), "g", "b");
    Ok(LayerIds { q: wb("q")?, k: wb("k")?, v: wb("v")?, o: wb("o")?, ln1: gb("ln1")?, f1: wb("ffn1")?, f2: wb("ffn2")?, ln2: gb("ln2")? })
}

impl Model {
    /// Fresh weights: uniform with standard deviation `init_std`, layer-norm
    /// gains 1, biases 0.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = config.init_std * 3f64.sqrt();
        let (d, f, v) = (config.hidden, config.ffn, config.vocab_size);
        let mut s = ParameterStore::new();
        s.add_uniform("embed.word", v, d, bound, &mut rng)?;
        s.add_uniform("embed.pos", config.max_len, d, bound, &mut rng)?;
        s.add_const("embed.ln.g", 1, d, 1.0)?;
        s.add_const("embed.ln.b", 1, d, 0.0)?;
        let mut add_layer = |s: &mut ParameterStore, base: &str| -> Result<(), NumError> {
            for n in ["q", "k", "v", "o"] {
                s.add_uniform(&format!("{base}.{n}.w"), d, d, bound, &mut rng)?;
                s.add_const(&format!("{base}.{n}.b"), 1, d, 0.0)?;
            }
            s.add_const(&format!("{base}.ln1.g"), 1, d, 1.0)?;
            s.add_const(&format!("{base}.ln1.b"), 1, d, 0.0)?;
            s.add_uniform(&format!("{base}.ffn1.w"), d, f, bound, &mut rng)?;
            s.add_const(&format!("{base}.ffn1.b"), 1, f, 0.0)?;
            s.add_uniform(&format!("{base}.ffn2.w"), f, d, bound, &mut rng)?;
            s.add_const(&format!("{base}.ffn2.b"), 1, d, 0.0)?;
            s.add_const(&format!("{base}.ln2.g"), 1, d, 1.0)?;
            s.add_const(&format!("{base}.ln2.b"), 1, d, 0.0)?;
            Ok(())
        };
        for i in 0..config.layers {
            add_layer(&mut s, &format!("encoder.{i}"))?;
        }
        add_layer(&mut s, "fuse")?;
        for t in 0..NODE_TYPES {
            for n in ["q", "k"] {
                s.add_uniform(&format!("transage.{n}.{t}.w"), d, d, bound, &mut rng)?;
                s.add_const(&format!("transage.{n}.{t}.b"), 1, d, 0.0)?;
            }
        }
        s.add_uniform("transage.out.w", config.heads * d, d, bound / (config.heads as f64).sqrt(), &mut rng)?;
        if config.transage_residual {
            s.add_const("transage.ln.g", 1, d, 1.0)?;
            s.add_const("transage.ln.b", 1, d, 0.0)?;
        }
        s.add_uniform("mlm.w", d, v, bound, &mut rng)?;
        s.add_const("mlm.b", 1, v, 0.0)?;
        s.add_uniform("geo.w", d, GEO_POSITIONS * GEO_CLASSES, bound, &mut rng)?;
        Self::from_store(config, s)
    }

    /// Binds a configuration to existing weights, checking names and shapes.
    pub fn from_store(config: ModelConfig, store: ParameterStore) -> Result<Self, ModelError> {
        config.validate()?;
        let s = &store;
        let layout = Layout {
            word: find(s, "embed.word")?,
            pos: find(s, "embed.pos")?,
            emb_ln: pair(s, "embed.ln", "g", "b")?,
            encoder: (0..config.layers).map(|i| layer_layout(s, &format!("encoder.{i}"))).collect::<Result<_, _>>()?,
            ts_q: (0..NODE_TYPES).map(|t| pair(s, &format!("transage.q.{t}"), "w", "b")).collect::<Result<_, _>>()?,
            ts_k: (0..NODE_TYPES).map(|t| pair(s, &format!("transage.k.{t}"), "w", "b")).collect::<Result<_, _>>()?,
            ts_out: find(s, "transage.out.w")?,
            ts_ln: if config.transage_residual { Some(pair(s, "transage.ln", "g", "b")?) } else { None },
            fuse: layer_layout(s, "fuse")?,
            mlm: pair(s, "mlm", "w", "b")?,
            geo: find(s, "geo.w")?,
        };
        let (d, v) = (config.hidden, config.vocab_size);
        let expect = [
            (layout.word, (v, d)),
            (layout.pos, (config.max_len, d)),
            (layout.ts_out, (config.heads * d, d)),
            (layout.mlm.0, (d, v)),
            (layout.geo, (d, GEO_POSITIONS * GEO_CLASSES)),
        ];
        for (id, shape) in expect {
            if store.value(id).dim() != shape {
                return Err(ModelError::Config(format!("{} has shape {:?}, expected {shape:?}", store.name(id), store.value(id).dim())));
            }
        }
        Ok(Self { config, store, layout })
    }

    /// Weights plus the configuration echoed as `model.*` metadata, and
    /// `extra` entries verbatim.
    pub fn to_checkpoint(&self, with_optimizer: bool, extra: &[(String, String)]) -> Checkpoint {
        let mut ck = self.store.to_checkpoint(with_optimizer);
        for (k, v) in self.config.entries() {
            ck.meta.insert(format!("model.{k}"), v);
        }
        for (k, v) in extra {
            ck.meta.insert(k.clone(), v.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let mut config = ModelConfig::default();
        let pairs: Vec<(String, String)> = ck.meta.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        config.apply_section("model", &pairs)?;
        Self::from_store(config, ParameterStore::from_checkpoint(ck)?)
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
