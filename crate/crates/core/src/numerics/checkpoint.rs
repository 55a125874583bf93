//! Named-tensor container.
//!
//! ```text
//! "EGL1" | version u32 | meta length u32 | meta (JSON object of strings)
//!        | tensor count u32 | tensor* | crc32 u32
//! tensor = name length u32 | name | dtype u8 | ndim u32 | dims u64*ndim | values
//! ```
//!
//! Little-endian throughout. The only dtype is f64 (tag 1), stored as raw
//! IEEE bits so a round trip is bit-exact.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::Mat;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EGL1";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn from_mat(name: &str, m: &Mat) -> Self {
        Self { name: name.to_string(), shape: vec![m.nrows(), m.ncols()], data: m.iter().copied().collect() }
    }

    pub fn to_mat(&self) -> Result<Mat, String> {
        match self.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), self.data.clone()).map_err(|e| e.to_string()),
            _ => Err(format!("{} is not 2-D: {:?}", self.name, self.shape)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("string map serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic);
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Checksum);
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(CheckpointError::Checksum);
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
            let s = body.get(pos..pos + n).ok_or_else(|| CheckpointError::Format("truncated".into()))?;
            pos += n;
            Ok(s)
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let meta_len = u32_at(take(4)?) as usize;
        let meta = serde_json::from_slice(take(meta_len)?).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let count = u32_at(take(4)?) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32_at(take(4)?) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|e| CheckpointError::Format(e.to_string()))?;
            let dtype = take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(CheckpointError::Format(format!("dtype {dtype} for {name}")));
            }
            let ndim = u32_at(take(4)?) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(n.checked_mul(8).ok_or_else(|| CheckpointError::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if pos != body.len() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(Self { meta, tensors })
    }
}
