//! Binary graph snapshot.
//!
//! ```text
//! "GGR1" | version u32 | section* | crc32 u32
//! section = tag u32 | byte length u64 | payload
//! ```
//!
//! Sections appear in a fixed order: `META` (JSON config and ingest
//! statistics), `NODE` (node table), then one `CSR ` per edge type (QcP,
//! OtD outgoing, PcP). All integers are little-endian. The checksum covers
//! every preceding byte.

use super::{Csr, GraphConfig, GraphError, HeteroGraph, IngestStats, Node, NodeType};
use crate::dgg::{LatLng, MultiLevelCode, CODE_LEN};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"GGR1";
pub const SNAPSHOT_VERSION: u32 = 1;

const TAG_META: &[u8; 4] = b"META";
const TAG_NODE: &[u8; 4] = b"NODE";
const TAG_CSR: &[u8; 4] = b"CSR ";

#[derive(serde::Serialize, serde::Deserialize)]
struct Meta {
    config: GraphConfig,
    stats: IngestStats,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn save_snapshot(graph: &HeteroGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    put_u32(&mut out, SNAPSHOT_VERSION);

    let meta = Meta { config: graph.config.clone(), stats: graph.stats.clone() };
    section(&mut out, TAG_META, &serde_json::to_vec(&meta).expect("serializable"));

    let mut nodes = Vec::new();
    put_u32(&mut nodes, graph.nodes.len() as u32);
    for n in &graph.nodes {
        nodes.push(n.node_type as u8);
        put_str(&mut nodes, &n.key);
        put_str(&mut nodes, &n.text);
        match (n.location, n.geocode) {
            (Some(loc), Some(code)) => {
                nodes.push(1);
                nodes.extend_from_slice(&loc.lat().to_le_bytes());
                nodes.extend_from_slice(&loc.lng().to_le_bytes());
                nodes.extend_from_slice(code.as_bytes());
            }
            _ => nodes.push(0),
        }
    }
    section(&mut out, TAG_NODE, &nodes);

    for csr in &graph.adjacency {
        let mut body = Vec::new();
        put_u32(&mut body, csr.offsets().len() as u32);
        put_u32(&mut body, csr.targets().len() as u32);
        for &o in csr.offsets() {
            put_u32(&mut body, o);
        }
        for &t in csr.targets() {
            put_u32(&mut body, t);
        }
        section(&mut out, TAG_CSR, &body);
    }

    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        if self.pos + n > self.buf.len() {
            return Err(GraphError::Format("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, GraphError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, GraphError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, GraphError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| GraphError::Format("invalid utf-8".into()))
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>, GraphError> {
        let found = self.take(4)?;
        if found != tag {
            return Err(GraphError::Format(format!("expected section {:?}", String::from_utf8_lossy(tag))));
        }
        let len = self.u64()? as usize;
        Ok(Reader { buf: self.take(len)?, pos: 0 })
    }
}

pub fn load_snapshot(bytes: &[u8]) -> Result<HeteroGraph, GraphError> {
    if bytes.len() < 12 || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(if bytes.len() >= 4 && &bytes[..4] == SNAPSHOT_MAGIC {
            GraphError::Checksum
        } else {
            GraphError::Format("missing GGR1 magic".into())
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(GraphError::Version { found: version, expected: SNAPSHOT_VERSION });
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(GraphError::Checksum);
    }
    let mut r = Reader { buf: body, pos: 8 };

    let meta_sec = r.section(TAG_META)?;
    let meta: Meta = serde_json::from_slice(meta_sec.buf).map_err(|e| GraphError::Format(e.to_string()))?;

    let mut ns = r.section(TAG_NODE)?;
    let count = ns.u32()? as usize;
    let mut nodes = Vec::with_capacity(count);
    for id in 0..count {
        let node_type = match ns.u8()? {
            0 => NodeType::Poi,
            1 => NodeType::Query,
            t => return Err(GraphError::Format(format!("node type {t}"))),
        };
        let key = ns.string()?;
        let text = ns.string()?;
        let (location, geocode) = match ns.u8()? {
            1 => {
                let loc = LatLng::new(ns.f64()?, ns.f64()?)?;
                let code = std::str::from_utf8(ns.take(CODE_LEN)?)
                    .map_err(|_| GraphError::Format("geocode".into()))?
                    .parse::<MultiLevelCode>()?;
                (Some(loc), Some(code))
            }
            _ => (None, None),
        };
        nodes.push(Node { node_id: id as u32, node_type, key, text, location, geocode });
    }

    let mut csrs = Vec::with_capacity(3);
    for _ in 0..3 {
        let mut cs = r.section(TAG_CSR)?;
        let n_off = cs.u32()? as usize;
        let n_tgt = cs.u32()? as usize;
        if n_off != count + 1 {
            return Err(GraphError::Format("csr size does not match node count".into()));
        }
        let offsets = (0..n_off).map(|_| cs.u32()).collect::<Result<Vec<_>, _>>()?;
        let targets = (0..n_tgt).map(|_| cs.u32()).collect::<Result<Vec<_>, _>>()?;
        if targets.iter().any(|&t| t as usize >= count) {
            return Err(GraphError::Format("neighbor id out of range".into()));
        }
        csrs.push(Csr::from_parts(offsets, targets)?);
    }
    if r.pos != body.len() {
        return Err(GraphError::Format("trailing bytes".into()));
    }
    let adjacency: [Csr; 3] = csrs.try_into().expect("three sections");
    Ok(HeteroGraph::from_parts(nodes, adjacency, meta.config, meta.stats))
}
