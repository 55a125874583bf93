#![allow(dead_code)]

use std::path::PathBuf;

use geolang::dgg::{geocode_point, LatLng};
use geolang::geograph::{read_clicks, read_pois, read_sessions, NodeType};
use geolang::masker::{MaskAction, MaskedExample, MaskedNode, CLS_ID, NO_LABEL};
use geolang::model::ModelConfig;
use geolang::pipeline::{prepare, PipelineConfig, Prepared};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn prepare_fixture(cfg: &PipelineConfig) -> Prepared {
    let dir = fixture_dir();
    prepare(
        read_pois(dir.join("pois.jsonl")).unwrap(),
        read_clicks(dir.join("clicks.jsonl")).unwrap(),
        read_sessions(dir.join("sessions.jsonl")).unwrap(),
        cfg,
    )
    .unwrap()
}

/// A node with `[CLS]` prepended; `masked` lists (position, label) pairs
/// with positions counted after the `[CLS]`.
pub fn node(node_type: NodeType, ids: &[u32], masked: &[(usize, u32)], lat_lng: Option<(f64, f64)>) -> MaskedNode {
    let mut input_ids = vec![CLS_ID];
    input_ids.extend_from_slice(ids);
    let n = input_ids.len();
    let mut actions = vec![None; n];
    let mut labels = vec![NO_LABEL; n];
    for &(p, l) in masked {
        actions[p + 1] = Some(MaskAction::Mask);
        labels[p + 1] = l;
    }
    let geocode = lat_lng.map(|(a, b)| geocode_point(LatLng::new(a, b).unwrap()));
    MaskedNode { node_type, input_ids, actions, labels, geocode, truncated: false }
}

pub fn poi(ids: &[u32], masked: &[(usize, u32)], lat: f64, lng: f64) -> MaskedNode {
    node(NodeType::Poi, ids, masked, Some((lat, lng)))
}

pub fn query(ids: &[u32], masked: &[(usize, u32)]) -> MaskedNode {
    node(NodeType::Query, ids, masked, None)
}

pub fn doc(nodes: Vec<MaskedNode>) -> MaskedExample {
    MaskedExample { nodes }
}

pub fn tiny_config(hidden: usize, heads: usize, vocab: usize) -> ModelConfig {
    ModelConfig { hidden, layers: 2, heads, ffn: 2 * hidden, vocab_size: vocab, max_len: 16, ..Default::default() }
}
