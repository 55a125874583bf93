//! Whole-entity masking of walk documents for masked language modelling.
//!
//! Each entity span is selected independently; every word of a selected
//! entity then gets its own replacement action. Labels always carry the
//! original token, including for [`MaskAction::Keep`].

mod file;
mod lexicon;
mod segment;
mod tokenizer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgg::MultiLevelCode;
use crate::geograph::NodeType;
use crate::sampler::CorpusDocument;

pub use file::{read_examples, write_examples, MaskFileError, Sidecar, EXAMPLES_MAGIC};
pub use lexicon::{levenshtein, MisspellLexicon, MAX_NORMALIZED_DISTANCE};
pub use segment::{default_segmenter, poi_entities, DictionarySegmenter, Segmenter};
pub use tokenizer::{Tokenizer, Vocab, WordTokenizer, CLS, CLS_ID, MASK, MASK_ID, PAD, PAD_ID, SEP, SEP_ID, SPECIALS, UNK, UNK_ID};

/// Label value at positions that are not predicted.
pub const NO_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskAction {
    Mask,
    Misspell,
    Random,
    Keep,
}

impl MaskAction {
    pub const ALL: [MaskAction; 4] = [MaskAction::Mask, MaskAction::Misspell, MaskAction::Random, MaskAction::Keep];

    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(c: u8) -> Option<Option<Self>> {
        match c {
            0 => Some(None),
            1..=4 => Some(Some(Self::ALL[c as usize - 1])),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub select_prob: f64,
    pub p_mask: f64,
    pub p_misspell: f64,
    pub p_random: f64,
    /// Tokens per node including the leading `[CLS]`.
    pub max_node_tokens: usize,
    pub seed: u64,
}

crate::config::kv_config!(MaskConfig { select_prob, p_mask, p_misspell, p_random, max_node_tokens, seed });

impl Default for MaskConfig {
    fn default() -> Self {
        Self { select_prob: 0.15, p_mask: 0.70, p_misspell: 0.10, p_random: 0.10, max_node_tokens: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedNode {
    pub node_type: NodeType,
    /// Model input, starting with `[CLS]`.
    pub input_ids: Vec<u32>,
    pub actions: Vec<Option<MaskAction>>,
    /// Original token at masked positions, [`NO_LABEL`] elsewhere.
    pub labels: Vec<u32>,
    pub geocode: Option<MultiLevelCode>,
    /// Set when the node text was cut to fit `max_node_tokens`.
    pub truncated: bool,
}

impl MaskedNode {
    pub fn mask_positions(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l != NO_LABEL).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskedExample {
    pub nodes: Vec<MaskedNode>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    pub entities: usize,
    pub selected: usize,
    pub mask: usize,
    pub misspell: usize,
    pub random: usize,
    pub keep: usize,
    /// MISSPELL draws that fell back to RANDOM for lack of a lexicon entry.
    pub misspell_fallbacks: usize,
    pub truncated_nodes: usize,
}

impl MaskStats {
    fn merge(&mut self, o: &MaskStats) {
        self.entities += o.entities;
        self.selected += o.selected;
        self.mask += o.mask;
        self.misspell += o.misspell;
        self.random += o.random;
        self.keep += o.keep;
        self.misspell_fallbacks += o.misspell_fallbacks;
        self.truncated_nodes += o.truncated_nodes;
    }

    pub fn words(&self) -> usize {
        self.mask + self.misspell + self.random + self.keep
    }
}

/// Everything needed to turn text into masked model input.
pub struct Masker<'a> {
    pub vocab: &'a Vocab,
    pub tokenizer: &'a dyn Tokenizer,
    pub segmenter: &'a dyn Segmenter,
    pub lexicon: &'a MisspellLexicon,
    pub config: &'a MaskConfig,
}

impl Masker<'_> {
    fn random_id<R: Rng>(&self, rng: &mut R) -> u32 {
        let lo = self.vocab.first_regular_id();
        let hi = self.vocab.len() as u32;
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            MASK_ID
        }
    }

    fn misspelling<R: Rng>(&self, word: &str, rng: &mut R) -> Option<u32> {
        let options: Vec<(u32, u64)> =
            self.lexicon.misspellings(word).into_iter().filter_map(|(w, f)| self.vocab.get(w).map(|id| (id, f))).collect();
        let total: u64 = options.iter().map(|(_, f)| f).sum();
        if total == 0 {
            return None;
        }
        let mut x = rng.random_range(0..total);
        for (id, f) in options {
            if x < f {
                return Some(id);
            }
            x -= f;
        }
        unreachable!()
    }

    /// Tokenizes one node without masking.
    pub fn encode_node(&self, node_type: NodeType, text: &str, geocode: Option<MultiLevelCode>) -> (MaskedNode, Vec<String>) {
        let mut words = self.tokenizer.split(text);
        let limit = self.config.max_node_tokens.saturating_sub(1);
        let truncated = words.len() > limit;
        words.truncate(limit);
        let mut input_ids = Vec::with_capacity(words.len() + 1);
        input_ids.push(CLS_ID);
        input_ids.extend(words.iter().map(|w| self.vocab.id(w)));
        let n = input_ids.len();
        let geocode = if node_type == NodeType::Poi { geocode } else { None };
        (MaskedNode { node_type, input_ids, actions: vec![None; n], labels: vec![NO_LABEL; n], geocode, truncated }, words)
    }

    pub fn mask_document<R: Rng>(&self, doc: &CorpusDocument, rng: &mut R, stats: &mut MaskStats) -> MaskedExample {
        let cfg = self.config;
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for cn in &doc.nodes {
            let (mut node, words) = self.encode_node(cn.node_type, &cn.text, cn.geocode);
            stats.truncated_nodes += usize::from(node.truncated);
            for span in self.segmenter.segment(&words) {
                stats.entities += 1;
                if rng.random::<f64>() >= cfg.select_prob {
                    continue;
                }
                stats.selected += 1;
                for w in span {
                    let pos = w + 1;
                    let original = node.input_ids[pos];
                    let r: f64 = rng.random();
                    let mut action = if r < cfg.p_mask {
                        MaskAction::Mask
                    } else if r < cfg.p_mask + cfg.p_misspell {
                        MaskAction::Misspell
                    } else if r < cfg.p_mask + cfg.p_misspell + cfg.p_random {
                        MaskAction::Random
                    } else {
                        MaskAction::Keep
                    };
                    let replacement = match action {
                        MaskAction::Mask => MASK_ID,
                        MaskAction::Keep => original,
                        MaskAction::Random => self.random_id(rng),
                        MaskAction::Misspell => match self.misspelling(&words[w], rng) {
                            Some(id) => id,
                            None => {
                                stats.misspell_fallbacks += 1;
                                action = MaskAction::Random;
                                self.random_id(rng)
                            }
                        },
                    };
                    match action {
                        MaskAction::Mask => stats.mask += 1,
                        MaskAction::Misspell => stats.misspell += 1,
                        MaskAction::Random => stats.random += 1,
                        MaskAction::Keep => stats.keep += 1,
                    }
                    node.input_ids[pos] = replacement;
                    node.actions[pos] = Some(action);
                    node.labels[pos] = original;
                }
            }
            nodes.push(node);
        }
        MaskedExample { nodes }
    }

    /// Masks every document with an RNG keyed by (seed, document index), so
    /// the result does not depend on how work is scheduled.
    pub fn mask_corpus(&self, docs: &[CorpusDocument]) -> (Vec<MaskedExample>, MaskStats) {
        let seed = self.config.seed;
        let parts: Vec<(MaskedExample, MaskStats)> = docs
            .par_iter()
            .enumerate()
            .map(|(i, d)| {
                let mut rng = document_rng(seed, i as u64);
                let mut st = MaskStats::default();
                let ex = self.mask_document(d, &mut rng, &mut st);
                (ex, st)
            })
            .collect();
        let mut total = MaskStats::default();
        let mut out = Vec::with_capacity(parts.len());
        for (ex, st) in parts {
            total.merge(&st);
            out.push(ex);
        }
        (out, total)
    }
}

pub fn document_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s[8..16].copy_from_slice(&index.to_le_bytes());
    s[16..24].copy_from_slice(b"masking!");
    ChaCha8Rng::from_seed(s)
}
