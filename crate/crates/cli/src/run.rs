//! Subcommand bodies.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use geolang::geograph::{load_snapshot, read_clicks, read_pois, read_sessions, save_snapshot, EdgeType, HeteroGraph, NodeType};
use geolang::masker::{read_examples, write_examples, MaskedNode, Sidecar, Vocab, WordTokenizer, EXAMPLES_MAGIC};
use geolang::model::{pretrain_until, Model, PretrainError};
use geolang::numerics::{Checkpoint, Mat};
use geolang::pipeline::{model_config, MaskingResources, PipelineConfig, PipelineError};
use geolang::sampler::{generate_corpus, read_corpus};
use geolang::tasks::{
    analogy as rank_analogy, finetune_classifier, finetune_geocoder, finetune_tagger, read_jsonl, Classifier, EntityF1, GeocodingRecord, Geocoder, LabeledSequence,
    RecommendationRecord, Recommender, Relevance, TagSet, Tagger, TaskError, TextEncoder,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::{EvalTask, FinetuneTask, ModelArgs, NodeKind};

/// Checkpoint metadata keys written next to the `model.*` entries.
const META_VOCAB: &str = "vocab_fingerprint";
const META_CONFIG: &str = "config";
const META_TASK: &str = "task";
const META_TAGS: &str = "task.tags";

const CHUNK: usize = 64;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(path).map_err(|e| match e {
        TaskError::Io(source) => CliError::io(path, source),
        e => e.into(),
    })
}

fn load_graph(path: &Path) -> Result<HeteroGraph, CliError> {
    Ok(load_snapshot(&read_bytes(path)?)?)
}

fn load_vocab(path: &Path) -> Result<Vocab, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Vocab::read(BufReader::new(file)).map_err(|e| CliError::io(path, e))
}

/// Loads a checkpoint and refuses a vocabulary other than the one it was
/// trained with.
fn load_model(args: &ModelArgs) -> Result<(Model, Checkpoint, Vocab), CliError> {
    let vocab = load_vocab(&args.vocab)?;
    let ck = Checkpoint::from_bytes(&read_bytes(&args.checkpoint)?)?;
    if let Some(fp) = ck.meta.get(META_VOCAB) {
        if *fp != vocab.fingerprint() {
            return Err(CliError::Invalid(format!(
                "{} was trained with vocabulary {fp}, but {} has fingerprint {}",
                args.checkpoint.display(),
                args.vocab.display(),
                vocab.fingerprint()
            )));
        }
    }
    let model = Model::from_checkpoint(&ck)?;
    Ok((model, ck, vocab))
}

fn encoder(vocab: &Vocab) -> TextEncoder<'_> {
    TextEncoder { vocab, tokenizer: &WordTokenizer }
}

fn node_type(kind: NodeKind) -> NodeType {
    match kind {
        NodeKind::Poi => NodeType::Poi,
        NodeKind::Query => NodeType::Query,
    }
}

fn graph_summary(graph: &HeteroGraph) -> serde_json::Value {
    let count = |t: NodeType| graph.nodes().iter().filter(|n| n.node_type == t).count();
    let edges: BTreeMap<&str, usize> = EdgeType::ALL.iter().map(|&t| (t.name(), graph.edge_count(t))).collect();
    json!({
        "nodes": graph.len(),
        "pois": count(NodeType::Poi),
        "queries": count(NodeType::Query),
        "edges": edges,
        "config": graph.config(),
        "stats": graph.stats(),
    })
}

pub fn build_graph(cfg: &PipelineConfig, pois: &Path, clicks: &Path, sessions: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let sessions = match sessions {
        Some(p) => read_sessions(p)?,
        None => Vec::new(),
    };
    let graph = HeteroGraph::build(cfg.graph.clone(), read_pois(pois)?, read_clicks(clicks)?, sessions)?;
    if graph.is_empty() {
        return Err(PipelineError::EmptyGraph.into());
    }
    write_bytes(out, &save_snapshot(&graph))?;
    println!("{}", graph_summary(&graph));
    Ok(())
}

pub fn inspect_snapshot(path: &Path) -> Result<(), CliError> {
    println!("{}", graph_summary(&load_graph(path)?));
    Ok(())
}

pub fn sample_corpus(cfg: &PipelineConfig, graph: &Path, out: &Path) -> Result<(), CliError> {
    cfg.walk.validate()?;
    let graph = load_graph(graph)?;
    let file = File::create(out).map_err(|e| CliError::io(out, e))?;
    let stats = generate_corpus(&graph, &cfg.walk, BufWriter::new(file)).map_err(|e| CliError::io(out, e))?;
    write_json(&with_suffix(out, ".meta.json"), &json!({ "walk": cfg.walk, "stats": stats }))?;
    println!("{}", to_json(&stats));
    Ok(())
}

pub fn mask_corpus(cfg: &PipelineConfig, graph: &Path, corpus: &Path, out: &Path, vocab_out: &Path) -> Result<(), CliError> {
    let graph = load_graph(graph)?;
    let file = File::open(corpus).map_err(|e| CliError::io(corpus, e))?;
    let docs = read_corpus(BufReader::new(file))?;
    let res = MaskingResources::from_graph(&graph);
    let (examples, stats) = res.mask(&docs, &cfg.mask);
    write_bytes(out, &write_examples(&examples))?;
    let mut vocab = Vec::new();
    res.vocab.write(&mut vocab).expect("writing to memory");
    write_bytes(vocab_out, &vocab)?;
    let sidecar = Sidecar {
        format: String::from_utf8_lossy(EXAMPLES_MAGIC).into_owned(),
        examples: examples.len(),
        vocab_size: res.vocab.len(),
        vocab_fingerprint: res.vocab.fingerprint(),
        config: cfg.mask.clone(),
        stats,
    };
    write_json(&with_suffix(out, ".json"), &sidecar)?;
    println!("{}", to_json(&sidecar));
    Ok(())
}

pub fn pretrain(cfg: &PipelineConfig, examples: &Path, vocab: &Path, out: &Path, resume: Option<&Path>, log: Option<&Path>, stop_after: Option<u64>) -> Result<(), CliError> {
    let args = ModelArgs { checkpoint: resume.map(Path::to_path_buf).unwrap_or_default(), vocab: vocab.to_path_buf() };
    let (mut model, vocab) = match resume {
        Some(_) => {
            let (model, ck, vocab) = load_model(&args)?;
            if ck.meta.get(META_CONFIG).is_some_and(|c| *c != cfg.render()) {
                log::warn!("resuming with a configuration that differs from the checkpoint's");
            }
            (model, vocab)
        }
        None => {
            let vocab = load_vocab(vocab)?;
            (Model::new(model_config(cfg, &vocab))?, vocab)
        }
    };
    let fingerprint = vocab.fingerprint();
    let sidecar_path = with_suffix(examples, ".json");
    if sidecar_path.exists() {
        let sidecar: Sidecar = serde_json::from_str(&read_text(&sidecar_path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", sidecar_path.display())))?;
        if sidecar.vocab_fingerprint != fingerprint {
            return Err(CliError::Invalid(format!(
                "{} was masked with vocabulary {}, but the vocabulary has fingerprint {fingerprint}",
                examples.display(),
                sidecar.vocab_fingerprint
            )));
        }
    }
    let corpus = read_examples(&read_bytes(examples)?)?;
    let extra = [(META_VOCAB.to_string(), fingerprint), (META_CONFIG.to_string(), cfg.render())];
    let save = |m: &Model| write_bytes(out, &m.to_checkpoint(true, &extra).to_bytes());
    let stop = stop_after.unwrap_or(cfg.pretrain.steps);
    let report = match pretrain_until(&mut model, &corpus, &cfg.pretrain, stop, |step, m| {
        log::info!("checkpoint at step {step}");
        save(m).map_err(|e| e.to_string())
    }) {
        Ok(r) => r,
        Err(PretrainError::Diverged { step, reason, last_good }) => {
            let path = with_suffix(out, ".diverged");
            write_bytes(&path, &last_good.to_bytes())?;
            log::error!("last good parameters written to {}", path.display());
            return Err(PretrainError::Diverged { step, reason, last_good }.into());
        }
        Err(e) => return Err(e.into()),
    };
    save(&model)?;

    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".log.jsonl"));
    let file = OpenOptions::new().create(true).write(true).append(resume.is_some()).truncate(resume.is_none()).open(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    for entry in &report.logs {
        writeln!(w, "{}", to_json(entry)).map_err(|e| CliError::io(&log_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&log_path, e))?;

    let last = report.logs.last();
    println!("{}", json!({ "steps": model.store.step(), "loss": last.map(|l| l.loss), "mlm": last.and_then(|l| l.mlm), "geo": last.and_then(|l| l.geo) }));
    Ok(())
}

fn f1_json(f1: &EntityF1, n: usize) -> serde_json::Value {
    json!({ "metric": "entity_f1", "value": f1.f1, "n": n, "precision": f1.precision, "recall": f1.recall })
}

fn task_name(task: FinetuneTask) -> &'static str {
    match task {
        FinetuneTask::Classify => "classify",
        FinetuneTask::Match => "match",
        FinetuneTask::Tag => "tag",
        FinetuneTask::Geocode => "geocode",
    }
}

pub fn finetune(cfg: &PipelineConfig, task: FinetuneTask, args: &ModelArgs, data: &Path, out: &Path, classes: Option<usize>) -> Result<(), CliError> {
    let (model, _, vocab) = load_model(args)?;
    let enc = encoder(&vocab);
    let ft = &cfg.finetune;
    let mut extra = vec![
        (META_VOCAB.to_string(), vocab.fingerprint()),
        (META_CONFIG.to_string(), cfg.render()),
        (META_TASK.to_string(), task_name(task).to_string()),
    ];
    let (model, report) = match task {
        FinetuneTask::Classify | FinetuneTask::Match => {
            let rows: Vec<LabeledSequence> = jsonl(data)?;
            let classes = match (task, classes) {
                (FinetuneTask::Match, _) => Relevance::ALL.len(),
                (_, Some(c)) => c,
                _ => rows.iter().filter_map(|r| r.label.class()).max().map_or(0, |c| c + 1),
            };
            let (clf, acc) = finetune_classifier(model, &enc, &rows, classes, ft)?;
            (clf.model, json!(acc))
        }
        FinetuneTask::Tag => {
            let rows: Vec<LabeledSequence> = jsonl(data)?;
            let (tagger, f1) = finetune_tagger(model, &enc, &rows, ft)?;
            extra.push((META_TAGS.to_string(), to_json(tagger.tags.types())));
            (tagger.model, f1_json(&f1, rows.len()))
        }
        FinetuneTask::Geocode => {
            let rows: Vec<GeocodingRecord> = jsonl(data)?;
            let (geo, acc) = finetune_geocoder(model, &enc, &rows, ft)?;
            (geo.model, json!(acc))
        }
    };
    write_bytes(out, &model.to_checkpoint(false, &extra).to_bytes())?;
    println!("{report}");
    Ok(())
}

/// A checkpoint fine-tuned for one task is not silently scored on another.
fn expect_task(ck: &Checkpoint, expected: &str) -> Result<(), CliError> {
    match ck.meta.get(META_TASK) {
        Some(t) if t != expected => Err(CliError::Invalid(format!("checkpoint was fine-tuned for {t}, not {expected}"))),
        _ => Ok(()),
    }
}

fn poi_candidates(graph: &HeteroGraph, enc: &TextEncoder) -> Vec<(String, MaskedNode)> {
    graph.nodes().iter().filter(|n| n.node_type == NodeType::Poi).map(|n| (n.key.clone(), enc.node(NodeType::Poi, &n.text))).collect()
}

pub fn eval(task: EvalTask, args: &ModelArgs, data: &Path, graph: Option<&Path>, k: usize, km: f64) -> Result<(), CliError> {
    let (model, ck, vocab) = load_model(args)?;
    let enc = encoder(&vocab);
    let report = match task {
        EvalTask::Classify | EvalTask::Match => {
            expect_task(&ck, if matches!(task, EvalTask::Match) { "match" } else { "classify" })?;
            let rows: Vec<LabeledSequence> = jsonl(data)?;
            json!(Classifier::from_model(model)?.evaluate(&enc, &rows)?)
        }
        EvalTask::Tag => {
            expect_task(&ck, "tag")?;
            let types = ck.meta.get(META_TAGS).ok_or_else(|| CliError::Invalid("checkpoint has no tag set; fine-tune it with `finetune tag` first".into()))?;
            let types: Vec<String> = serde_json::from_str(types).map_err(|e| CliError::Invalid(format!("malformed tag set in checkpoint: {e}")))?;
            let rows: Vec<LabeledSequence> = jsonl(data)?;
            let f1 = Tagger::from_model(model, TagSet::new(types))?.evaluate(&enc, &rows)?;
            f1_json(&f1, rows.len())
        }
        EvalTask::Geocode => {
            let rows: Vec<GeocodingRecord> = jsonl(data)?;
            let (acc, fallbacks) = Geocoder { model }.evaluate(&enc, &rows, km)?;
            let mut v = json!(acc);
            v["fallbacks"] = json!(fallbacks);
            v
        }
        EvalTask::Recommend => {
            let graph = load_graph(graph.ok_or_else(|| CliError::Invalid("eval recommend needs --graph".into()))?)?;
            let rows: Vec<RecommendationRecord> = jsonl(data)?;
            let mut cases = Vec::with_capacity(rows.len());
            for (i, r) in rows.iter().enumerate() {
                let history = r
                    .history
                    .iter()
                    .map(|id| graph.poi_node(id).map(|v| enc.node(NodeType::Poi, &graph.node(v).text)))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| CliError::Invalid(format!("record {}: history names a POI missing from the graph", i + 1)))?;
                cases.push((history, r.gold.clone()));
            }
            let rec = Recommender::new(&model, &poi_candidates(&graph, &enc))?;
            json!(rec.evaluate(&model, &cases, k)?)
        }
    };
    println!("{report}");
    Ok(())
}

/// `[CLS]` rows for each text read as a one-node document.
fn embed_texts(model: &Model, enc: &TextEncoder, kind: NodeType, texts: &[&str], graph_mode: bool) -> Result<Mat, CliError> {
    let mut rows = Vec::with_capacity(texts.len());
    for part in texts.chunks(CHUNK) {
        let docs: Vec<_> = part.iter().map(|t| enc.single(kind, t)).collect();
        let m = model.embed(&docs, graph_mode)?;
        rows.extend(m.rows().into_iter().map(|r| r.to_vec()));
    }
    let width = model.config.hidden;
    Ok(Mat::from_shape_vec((rows.len(), width), rows.concat()).expect("rows share the hidden width"))
}

pub fn embed(args: &ModelArgs, input: &Path, kind: NodeKind, graph_mode: bool) -> Result<(), CliError> {
    let (model, _, vocab) = load_model(args)?;
    let enc = encoder(&vocab);
    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(|e| CliError::io(input, e))?;
    let texts: Vec<&str> = lines.iter().map(String::as_str).filter(|l| !l.trim().is_empty()).collect();
    let m = embed_texts(&model, &enc, node_type(kind), &texts, graph_mode)?;
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for (t, row) in texts.iter().zip(m.rows()) {
        writeln!(w, "{}", json!({ "text": t, "embedding": row.to_vec() })).map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    }
    w.flush().map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

pub fn geocode(args: &ModelArgs, text: &str) -> Result<(), CliError> {
    let (model, _, vocab) = load_model(args)?;
    let enc = encoder(&vocab);
    let pred = Geocoder { model }.predict(&enc, &[text])?.pop().expect("one prediction per text")?;
    if pred.fallback {
        log::warn!("predicted code {} is inconsistent past level {}; using that level", pred.code, pred.level);
    }
    println!("{:.6} {:.6} {}", pred.location.lat(), pred.location.lng(), pred.token);
    Ok(())
}

pub fn analogy(args: &ModelArgs, graph: &Path, [a, b, c]: [&str; 3], top: usize) -> Result<(), CliError> {
    let (model, _, vocab) = load_model(args)?;
    let enc = encoder(&vocab);
    let graph = load_graph(graph)?;
    let pois: Vec<_> = graph.nodes().iter().filter(|n| n.node_type == NodeType::Poi).collect();
    let texts: Vec<&str> = pois.iter().map(|n| n.text.as_str()).collect();
    let cands = embed_texts(&model, &enc, NodeType::Poi, &texts, false)?;
    let q = embed_texts(&model, &enc, NodeType::Poi, &[a, b, c], false)?;
    let row = |i: usize| q.row(i).to_vec();
    for (rank, (i, score)) in rank_analogy(&row(0), &row(1), &row(2), &cands, top).into_iter().enumerate() {
        println!("{}", json!({ "rank": rank + 1, "poi_id": pois[i].key, "text": pois[i].text, "score": score }));
    }
    Ok(())
}
