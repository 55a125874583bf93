//! Masked-example container.
//!
//! ```text
//! "GMX1" | version u32 | example count u32 | example* | crc32 u32
//! example = node count u32 | node*
//! node    = type u8 | len u32 | token ids u32*len | mask bitmap ceil(len/8)
//!           | action codes u8*len | label ids u32*len | has_geocode u8 | geocode [33]?
//! ```
//!
//! Little-endian throughout. Labels use `u32::MAX` for "no label". A JSON
//! sidecar records the vocabulary fingerprint and masking configuration.

use serde::{Deserialize, Serialize};

use super::{MaskAction, MaskConfig, MaskStats, MaskedExample, MaskedNode, NO_LABEL};
use crate::dgg::{MultiLevelCode, CODE_LEN};
use crate::geograph::NodeType;

pub const EXAMPLES_MAGIC: &[u8; 4] = b"GMX1";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum MaskFileError {
    #[error("not a masked-example file")]
    Magic,
    #[error("unsupported masked-example version {0}")]
    Version(u32),
    #[error("masked-example checksum mismatch")]
    Checksum,
    #[error("malformed masked-example file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub examples: usize,
    pub vocab_size: usize,
    pub vocab_fingerprint: String,
    pub config: MaskConfig,
    pub stats: MaskStats,
}

pub fn write_examples(examples: &[MaskedExample]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(EXAMPLES_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(examples.len() as u32).to_le_bytes());
    for ex in examples {
        out.extend_from_slice(&(ex.nodes.len() as u32).to_le_bytes());
        for n in &ex.nodes {
            out.push(n.node_type as u8);
            let len = n.input_ids.len();
            out.extend_from_slice(&(len as u32).to_le_bytes());
            for &id in &n.input_ids {
                out.extend_from_slice(&id.to_le_bytes());
            }
            let mut bitmap = vec![0u8; len.div_ceil(8)];
            for (i, &l) in n.labels.iter().enumerate() {
                if l != NO_LABEL {
                    bitmap[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&bitmap);
            out.extend(n.actions.iter().map(|a| a.map_or(0, MaskAction::code)));
            for &l in &n.labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
            match n.geocode {
                Some(code) => {
                    out.push(1);
                    out.extend_from_slice(code.as_bytes());
                }
                None => out.push(0),
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a>(&'a [u8], usize);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MaskFileError> {
        let s = self.0.get(self.1..self.1 + n).ok_or_else(|| MaskFileError::Format("truncated".into()))?;
        self.1 += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MaskFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_examples(bytes: &[u8]) -> Result<Vec<MaskedExample>, MaskFileError> {
    if bytes.len() < 4 || &bytes[..4] != EXAMPLES_MAGIC {
        return Err(MaskFileError::Magic);
    }
    if bytes.len() < 16 {
        return Err(MaskFileError::Checksum);
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(MaskFileError::Checksum);
    }
    let mut c = Cursor(body, 4);
    let version = c.u32()?;
    if version != VERSION {
        return Err(MaskFileError::Version(version));
    }
    let count = c.u32()? as usize;
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let n_nodes = c.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let node_type = match c.take(1)?[0] {
                0 => NodeType::Poi,
                1 => NodeType::Query,
                t => return Err(MaskFileError::Format(format!("node type {t}"))),
            };
            let len = c.u32()? as usize;
            let input_ids = (0..len).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
            let bitmap = c.take(len.div_ceil(8))?.to_vec();
            let actions = c
                .take(len)?
                .iter()
                .map(|&a| MaskAction::from_code(a).ok_or_else(|| MaskFileError::Format(format!("action code {a}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let labels = (0..len).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
            for (i, &l) in labels.iter().enumerate() {
                let flagged = bitmap[i / 8] & (1 << (i % 8)) != 0;
                if flagged != (l != NO_LABEL) || flagged != actions[i].is_some() {
                    return Err(MaskFileError::Format("mask bitmap disagrees with labels".into()));
                }
            }
            let geocode = match c.take(1)?[0] {
                0 => None,
                _ => {
                    let s = std::str::from_utf8(c.take(CODE_LEN)?).map_err(|e| MaskFileError::Format(e.to_string()))?;
                    Some(s.parse::<MultiLevelCode>().map_err(|e| MaskFileError::Format(e.to_string()))?)
                }
            };
            nodes.push(MaskedNode { node_type, input_ids, actions, labels, geocode, truncated: false });
        }
        examples.push(MaskedExample { nodes });
    }
    if c.1 != body.len() {
        return Err(MaskFileError::Format("trailing bytes".into()));
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masker::{CLS_ID, MASK_ID};

    fn example() -> MaskedExample {
        let code = crate::dgg::geocode_point(crate::dgg::LatLng::new(31.3, 120.7).unwrap());
        MaskedExample {
            nodes: vec![
                MaskedNode {
                    node_type: NodeType::Poi,
                    input_ids: vec![CLS_ID, MASK_ID, 9, 10, 11, 12, 13, 14, 15],
                    actions: vec![None, Some(MaskAction::Mask), None, None, None, None, None, None, Some(MaskAction::Keep)],
                    labels: vec![NO_LABEL, 7, NO_LABEL, NO_LABEL, NO_LABEL, NO_LABEL, NO_LABEL, NO_LABEL, 15],
                    geocode: Some(code),
                    truncated: false,
                },
                MaskedNode {
                    node_type: NodeType::Query,
                    input_ids: vec![CLS_ID, 8],
                    actions: vec![None, None],
                    labels: vec![NO_LABEL, NO_LABEL],
                    geocode: None,
                    truncated: false,
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let exs = vec![example(), MaskedExample::default(), example()];
        let bytes = write_examples(&exs);
        assert_eq!(read_examples(&bytes).unwrap(), exs);
    }

    #[test]
    fn corruption() {
        let bytes = write_examples(&[example()]);
        assert!(matches!(read_examples(&bytes[..bytes.len() - 1]), Err(MaskFileError::Checksum)));
        assert!(matches!(read_examples(b"XXXX"), Err(MaskFileError::Magic)));
    }
}
