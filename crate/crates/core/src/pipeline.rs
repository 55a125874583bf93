//! End-to-end data preparation: graph, walk corpus, vocabulary, lexicon and
//! masked examples, driven by one sectioned configuration.

use serde::{Deserialize, Serialize};

use crate::config::{parse_kv, ConfigError, KvConfig};
use crate::geograph::{EdgeType, GraphConfig, GraphError, HeteroGraph, NodeType, PoiRecord, QueryRecord, SessionRecord, FIELD_SEPARATOR};
use crate::masker::{default_segmenter, DictionarySegmenter, MaskConfig, MaskStats, MaskedExample, Masker, MisspellLexicon, Vocab, WordTokenizer};
use crate::model::{ModelConfig, PretrainConfig};
use crate::sampler::{render_document, sample_corpus, CorpusDocument, WalkConfig, WalkConfigError};
use crate::tasks::FineTuneConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub graph: GraphConfig,
    pub walk: WalkConfig,
    pub mask: MaskConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FineTuneConfig,
}

impl PipelineConfig {
    pub const SECTIONS: [&'static str; 6] = ["graph", "walk", "mask", "model", "pretrain", "finetune"];

    /// Parses sectioned `key=value` text over the defaults. Keys outside
    /// the known sections are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply(&parse_kv(text)?)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<(), ConfigError> {
        for (k, _) in pairs {
            let known = k.split_once('.').is_some_and(|(s, _)| Self::SECTIONS.contains(&s));
            if !known {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }
        self.graph.apply_section("graph", pairs)?;
        self.walk.apply_section("walk", pairs)?;
        self.mask.apply_section("mask", pairs)?;
        self.model.apply_section("model", pairs)?;
        self.pretrain.apply_section("pretrain", pairs)?;
        self.finetune.apply_section("finetune", pairs)
    }

    /// One seed for every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.graph.seed = seed;
        self.walk.seed = seed;
        self.mask.seed = seed;
        self.model.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
    }

    pub fn render(&self) -> String {
        [
            self.graph.render("graph"),
            self.walk.render("walk"),
            self.mask.render("mask"),
            self.model.render("model"),
            self.pretrain.render("pretrain"),
            self.finetune.render("finetune"),
        ]
        .concat()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Walk(#[from] WalkConfigError),
    #[error("graph has no nodes")]
    EmptyGraph,
}

/// Vocabulary, misspelling lexicon and entity segmenter, all derived from
/// the graph so that a snapshot alone reproduces them.
pub struct MaskingResources {
    pub vocab: Vocab,
    pub lexicon: MisspellLexicon,
    pub segmenter: DictionarySegmenter,
}

impl MaskingResources {
    pub fn from_graph(graph: &HeteroGraph) -> Self {
        Self { vocab: build_vocab(graph), lexicon: build_lexicon(graph), segmenter: build_segmenter(graph) }
    }

    pub fn mask(&self, documents: &[CorpusDocument], cfg: &MaskConfig) -> (Vec<MaskedExample>, MaskStats) {
        let masker = Masker { vocab: &self.vocab, tokenizer: &WordTokenizer, segmenter: &self.segmenter, lexicon: &self.lexicon, config: cfg };
        masker.mask_corpus(documents)
    }
}

/// Everything produced before pretraining.
pub struct Prepared {
    pub graph: HeteroGraph,
    pub documents: Vec<CorpusDocument>,
    pub resources: MaskingResources,
    pub examples: Vec<MaskedExample>,
    pub stats: MaskStats,
    /// `cfg.model` with `vocab_size` and `max_len` filled from the data.
    pub model: ModelConfig,
}

/// Vocabulary over every node text of the graph.
pub fn build_vocab(graph: &HeteroGraph) -> Vocab {
    Vocab::build(&WordTokenizer, graph.nodes().iter().map(|n| n.text.as_str()))
}

/// The name field of a rendered POI text.
pub fn poi_name(poi_text: &str) -> &str {
    poi_text.split(&format!(" {FIELD_SEPARATOR} ")).next().unwrap_or(poi_text)
}

/// Misspelling lexicon mined from every query node and the name of the POI
/// it was clicked through to.
pub fn build_lexicon(graph: &HeteroGraph) -> MisspellLexicon {
    let pairs = graph.nodes().iter().filter(|n| n.node_type == NodeType::Query).flat_map(|q| {
        graph.neighbors(q.node_id, EdgeType::QcP).iter().map(move |&p| (q.text.as_str(), poi_name(&graph.node(p).text)))
    });
    MisspellLexicon::build(&WordTokenizer, pairs)
}

pub fn build_segmenter(graph: &HeteroGraph) -> DictionarySegmenter {
    let texts = graph.nodes().iter().filter(|n| n.node_type == NodeType::Poi).map(|n| n.text.as_str());
    default_segmenter(&WordTokenizer, texts)
}

/// Model configuration sized for `vocab` and the masking length limit.
pub fn model_config(cfg: &PipelineConfig, vocab: &Vocab) -> ModelConfig {
    let mut model = cfg.model.clone();
    model.vocab_size = vocab.len();
    model.max_len = model.max_len.max(cfg.mask.max_node_tokens);
    model
}

/// Builds the graph, samples one walk per node and masks the corpus.
pub fn prepare(pois: Vec<PoiRecord>, clicks: Vec<QueryRecord>, sessions: Vec<SessionRecord>, cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    cfg.walk.validate()?;
    let graph = HeteroGraph::build(cfg.graph.clone(), pois, clicks, sessions)?;
    if graph.is_empty() {
        return Err(PipelineError::EmptyGraph);
    }
    let documents: Vec<CorpusDocument> = sample_corpus(&graph, &cfg.walk).iter().map(|d| render_document(&graph, d)).collect();
    let resources = MaskingResources::from_graph(&graph);
    let (examples, stats) = resources.mask(&documents, &cfg.mask);
    let model = model_config(cfg, &resources.vocab);
    Ok(Prepared { graph, documents, resources, examples, stats, model })
}
