//! Python bindings: the discrete global grid codec, graph construction and
//! walk sampling, corpus preparation, pretraining and model inference.
//!
//! Errors surface as `ValueError`, or `OSError` for file access.

use std::fs;
use std::io::BufReader;

use geolang::dgg::{self, LatLng, MultiLevelCode};
use geolang::geograph::{load_snapshot, read_clicks, read_pois, read_sessions, save_snapshot, EdgeType, HeteroGraph, NodeType};
use geolang::masker::{write_examples, Vocab, WordTokenizer};
use geolang::model::{self as gmodel, pretrain};
use geolang::numerics::{Checkpoint, Mat};
use geolang::pipeline::{prepare, PipelineConfig, Prepared};
use geolang::sampler::{render_document, sample_corpus};
use geolang::tasks::{self, CrfParams, Geocoder, TextEncoder};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(path: &str, e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(format!("{path}: {e}"))
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (_, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => PyList::new(py, items.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?)?.into_any(),
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, x) in map {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serialize<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(v).map_err(value_err)?)
}

fn latlng(lat: f64, lng: f64) -> PyResult<LatLng> {
    LatLng::new(lat, lng).map_err(value_err)
}

fn node_type(name: &str) -> PyResult<NodeType> {
    match name {
        "poi" => Ok(NodeType::Poi),
        "query" => Ok(NodeType::Query),
        other => Err(PyValueError::new_err(format!("node_type must be 'poi' or 'query', got {other:?}"))),
    }
}

/// 33-character multi-level code of the level-22 cell containing the point.
#[pyfunction]
fn encode_2lt3c(lat: f64, lng: f64) -> PyResult<String> {
    Ok(dgg::geocode_point(latlng(lat, lng)?).to_string())
}

/// The 22 cell tokens, level 1 first, named by a multi-level code.
#[pyfunction]
fn decode_2lt3c(code: &str) -> PyResult<Vec<String>> {
    let code: MultiLevelCode = code.parse().map_err(value_err)?;
    Ok(dgg::decode_2lt3c(&code).map_err(value_err)?.iter().map(|t| t.to_string()).collect())
}

/// Token of the cell at `level` containing the point.
#[pyfunction]
fn cell_token(lat: f64, lng: f64, level: u8) -> PyResult<String> {
    Ok(dgg::cell_token(dgg::latlng_to_cell(latlng(lat, lng)?, level).map_err(value_err)?).to_string())
}

/// Center `(lat, lng)` of the cell named by a token.
#[pyfunction]
fn cell_center(token: &str) -> PyResult<(f64, f64)> {
    let c = dgg::cell_center(dgg::token_to_cell(token).map_err(value_err)?);
    Ok((c.lat(), c.lng()))
}

#[pyfunction]
fn haversine_km(lat1: f64, lng1: f64, lat2: f64, lng2: f64) -> PyResult<f64> {
    Ok(tasks::haversine_km(&latlng(lat1, lng1)?, &latlng(lat2, lng2)?))
}

/// Exact-match chunk precision, recall and F1 over BIO tag sequences.
#[pyfunction]
fn entity_f1<'py>(py: Python<'py>, gold: Vec<Vec<String>>, pred: Vec<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
    if gold.len() != pred.len() {
        return Err(PyValueError::new_err(format!("{} gold sequences but {} predicted", gold.len(), pred.len())));
    }
    serialize(py, &tasks::entity_f1(&gold, &pred))
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what} rows differ in length")));
    }
    Mat::from_shape_vec((rows.len(), cols), rows.concat()).map_err(value_err)
}

/// Best tag path and its score under a linear-chain CRF.
#[pyfunction]
fn viterbi(emissions: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>, start: Vec<f64>, stop: Vec<f64>) -> PyResult<(Vec<usize>, f64)> {
    let em = matrix(emissions, "emissions")?;
    let p = CrfParams { transitions: matrix(transitions, "transitions")?, start: matrix(vec![start], "start")?, stop: matrix(vec![stop], "stop")? };
    tasks::viterbi(&em, &p).map_err(value_err)
}

/// Log partition function of a linear-chain CRF.
#[pyfunction]
fn crf_log_partition(emissions: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>, start: Vec<f64>, stop: Vec<f64>) -> PyResult<f64> {
    let em = matrix(emissions, "emissions")?;
    let p = CrfParams { transitions: matrix(transitions, "transitions")?, start: matrix(vec![start], "start")?, stop: matrix(vec![stop], "stop")? };
    tasks::crf_log_partition(&em, &p).map_err(value_err)
}

/// Sectioned `key=value` pipeline configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone, Default)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self { inner: PipelineConfig::parse(text).map_err(value_err)? })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.apply(&[(key.to_string(), value.to_string())]).map_err(value_err)
    }

    fn set_seed(&mut self, seed: u64) {
        self.inner.set_seed(seed);
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn __repr__(&self) -> String {
        format!("Config({:?})", self.inner.render())
    }
}

fn config(c: Option<&PyConfig>) -> PipelineConfig {
    c.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Heterogeneous POI/query graph.
#[pyclass(name = "Graph")]
struct PyGraph {
    inner: HeteroGraph,
}

#[pymethods]
impl PyGraph {
    /// Ingests JSON-lines POI, click and session files.
    #[staticmethod]
    #[pyo3(signature = (pois, clicks, sessions = None, config = None))]
    fn build(pois: &str, clicks: &str, sessions: Option<&str>, config: Option<&PyConfig>) -> PyResult<Self> {
        let sessions = sessions.map(read_sessions).transpose().map_err(value_err)?.unwrap_or_default();
        let cfg = self::config(config);
        let inner = HeteroGraph::build(cfg.graph, read_pois(pois).map_err(value_err)?, read_clicks(clicks).map_err(value_err)?, sessions).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Ok(Self { inner: load_snapshot(&bytes).map_err(value_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        fs::write(path, save_snapshot(&self.inner)).map_err(|e| io_err(path, e))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn edge_counts(&self) -> std::collections::BTreeMap<&'static str, usize> {
        EdgeType::ALL.iter().map(|&t| (t.name(), self.inner.edge_count(t))).collect()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, self.inner.stats())
    }

    fn poi_ids(&self) -> Vec<String> {
        self.inner.nodes().iter().filter(|n| n.node_type == NodeType::Poi).map(|n| n.key.clone()).collect()
    }

    /// Rendered text of a POI node.
    fn poi_text(&self, poi_id: &str) -> PyResult<String> {
        let v = self.inner.poi_node(poi_id).ok_or_else(|| PyValueError::new_err(format!("unknown POI {poi_id:?}")))?;
        Ok(self.inner.node(v).text.clone())
    }

    /// One walk document per node, as corpus-file lines.
    #[pyo3(signature = (config = None))]
    fn sample_corpus(&self, config: Option<&PyConfig>) -> PyResult<Vec<String>> {
        let cfg = self::config(config);
        cfg.walk.validate().map_err(value_err)?;
        Ok(sample_corpus(&self.inner, &cfg.walk).iter().map(|d| render_document(&self.inner, d).to_line()).collect())
    }
}

/// Graph, walk corpus, vocabulary and masked examples built in one call.
#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: Prepared,
    config: PipelineConfig,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    #[pyo3(signature = (pois, clicks, sessions, config = None))]
    fn prepare(pois: &str, clicks: &str, sessions: &str, config: Option<&PyConfig>) -> PyResult<Self> {
        let cfg = self::config(config);
        let inner = prepare(read_pois(pois).map_err(value_err)?, read_clicks(clicks).map_err(value_err)?, read_sessions(sessions).map_err(value_err)?, &cfg).map_err(value_err)?;
        Ok(Self { inner, config: cfg })
    }

    fn __len__(&self) -> usize {
        self.inner.examples.len()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.resources.vocab.len()
    }

    fn mask_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner.stats)
    }

    /// Writes the masked examples and the vocabulary.
    fn write(&self, examples_path: &str, vocab_path: &str) -> PyResult<()> {
        fs::write(examples_path, write_examples(&self.inner.examples)).map_err(|e| io_err(examples_path, e))?;
        let mut vocab = Vec::new();
        self.inner.resources.vocab.write(&mut vocab).map_err(|e| io_err(vocab_path, e))?;
        fs::write(vocab_path, vocab).map_err(|e| io_err(vocab_path, e))
    }

    /// Pretrains a fresh model; `steps` overrides `pretrain.steps`. The
    /// GIL is released while training.
    #[pyo3(signature = (steps = None))]
    fn pretrain(&self, py: Python<'_>, steps: Option<u64>) -> PyResult<(PyModel, Vec<f64>)> {
        let mut cfg = self.config.pretrain.clone();
        cfg.steps = steps.unwrap_or(cfg.steps);
        let (model, losses) = py
            .detach(|| -> Result<_, String> {
                let mut model = gmodel::Model::new(self.inner.model.clone()).map_err(|e| e.to_string())?;
                let report = pretrain(&mut model, &self.inner.examples, &cfg, |_, _| Ok(())).map_err(|e| e.to_string())?;
                Ok((model, report.logs.iter().map(|l| l.loss).collect()))
            })
            .map_err(PyValueError::new_err)?;
        Ok((PyModel { model, vocab: self.inner.resources.vocab.clone() }, losses))
    }
}

/// A pretrained or fine-tuned model with its vocabulary.
#[pyclass(name = "Model")]
struct PyModel {
    model: gmodel::Model,
    vocab: Vocab,
}

impl PyModel {
    fn encoder(&self) -> TextEncoder<'_> {
        TextEncoder { vocab: &self.vocab, tokenizer: &WordTokenizer }
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(checkpoint: &str, vocab: &str) -> PyResult<Self> {
        let bytes = fs::read(checkpoint).map_err(|e| io_err(checkpoint, e))?;
        let ck = Checkpoint::from_bytes(&bytes).map_err(value_err)?;
        let file = fs::File::open(vocab).map_err(|e| io_err(vocab, e))?;
        let vocab_data = Vocab::read(BufReader::new(file)).map_err(|e| io_err(vocab, e))?;
        if let Some(fp) = ck.meta.get("vocab_fingerprint") {
            if *fp != vocab_data.fingerprint() {
                return Err(PyValueError::new_err(format!("{checkpoint} was trained with vocabulary {fp}, not {}", vocab_data.fingerprint())));
            }
        }
        Ok(Self { model: gmodel::Model::from_checkpoint(&ck).map_err(value_err)?, vocab: vocab_data })
    }

    /// Writes parameters and optimizer state.
    fn save(&self, path: &str) -> PyResult<()> {
        let extra = [("vocab_fingerprint".to_string(), self.vocab.fingerprint())];
        fs::write(path, self.model.to_checkpoint(true, &extra).to_bytes()).map_err(|e| io_err(path, e))
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.model.config.hidden
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// `[CLS]` vector of each text read as a one-node document.
    #[pyo3(signature = (texts, node_type = "poi", graph_mode = false))]
    fn embed(&self, py: Python<'_>, texts: Vec<String>, node_type: &str, graph_mode: bool) -> PyResult<Vec<Vec<f64>>> {
        let kind = self::node_type(node_type)?;
        py.detach(|| {
            let enc = self.encoder();
            let mut out = Vec::with_capacity(texts.len());
            for part in texts.chunks(64) {
                let docs: Vec<_> = part.iter().map(|t| enc.single(kind, t)).collect();
                let m = self.model.embed(&docs, graph_mode).map_err(value_err)?;
                out.extend(m.rows().into_iter().map(|r| r.to_vec()));
            }
            Ok(out)
        })
    }

    /// Predicted code, token and cell center for a text.
    fn geocode<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let enc = self.encoder();
        let pred = Geocoder { model: self.model.clone() }.predict(&enc, &[text]).map_err(value_err)?.pop().expect("one prediction per text").map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("lat", pred.location.lat())?;
        d.set_item("lng", pred.location.lng())?;
        d.set_item("token", &pred.token)?;
        d.set_item("code", &pred.code)?;
        d.set_item("level", pred.level)?;
        d.set_item("fallback", pred.fallback)?;
        Ok(d.into_any())
    }
}

#[pymodule]
#[pyo3(name = "geolang")]
fn geolang_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(encode_2lt3c, m)?)?;
    m.add_function(wrap_pyfunction!(decode_2lt3c, m)?)?;
    m.add_function(wrap_pyfunction!(cell_token, m)?)?;
    m.add_function(wrap_pyfunction!(cell_center, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_km, m)?)?;
    m.add_function(wrap_pyfunction!(entity_f1, m)?)?;
    m.add_function(wrap_pyfunction!(viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(crf_log_partition, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
