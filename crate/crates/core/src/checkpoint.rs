//! Binary container shared by checkpoints and embedding indexes.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SCNTXTVR"
//! version  u32
//! hlen     u64      length of the JSON header in bytes
//! header   hlen     {"kind", "meta", "tensors": [{"name","rows","cols"}]}
//! data     f64 LE   every tensor, row-major, in header order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{ModelConfig, ModelParams, Vocab};
use crate::nn::Matrix;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCNTXTVR";
pub const VERSION: u32 = 1;

pub const KIND_CHECKPOINT: &str = "checkpoint";
pub const KIND_INDEX: &str = "index";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Matrix)>,
}

pub fn encode_container(
    kind: &str,
    meta: serde_json::Value,
    tensors: &[(&str, &Matrix)],
) -> Result<Vec<u8>> {
    let header = Header {
        kind: kind.to_string(),
        meta,
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorInfo {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;
    let scalars: usize = tensors.iter().map(|(_, m)| m.data().len()).sum();
    let mut out = Vec::with_capacity(20 + header.len() + 8 * scalars);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, m) in tensors {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8], expected_kind: &str) -> Result<Container> {
    let fail = |m: String| Error::Checkpoint(m);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fail("not a scenetext container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(fail(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(fail("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| fail(format!("malformed header: {e}")))?;
    if header.kind != expected_kind {
        return Err(fail(format!(
            "container holds a {}, expected a {expected_kind}",
            header.kind
        )));
    }
    let mut data = &body[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for info in header.tensors {
        let n = info
            .rows
            .checked_mul(info.cols)
            .ok_or_else(|| fail(format!("tensor `{}` is too large", info.name)))?;
        if data.len() < n * 8 {
            return Err(fail(format!("tensor `{}` is truncated", info.name)));
        }
        let values = data[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[n * 8..];
        tensors.push((info.name, Matrix::from_vec(info.rows, info.cols, values)));
    }
    if !data.is_empty() {
        return Err(fail(format!("{} trailing bytes after tensor data", data.len())));
    }
    Ok(Container {
        kind: header.kind,
        meta: header.meta,
        tensors,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::ingest(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::ingest(path, e))?;
    f.write_all(bytes).map_err(|e| Error::ingest(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::ingest(path, e))
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    vocab: Vec<String>,
}

impl ModelParams {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            model: self.config().clone(),
            vocab: self.vocab().tokens().to_vec(),
        };
        let meta = serde_json::to_value(meta)
            .map_err(|e| Error::Checkpoint(format!("cannot encode metadata: {e}")))?;
        let tensors: Vec<(&str, &Matrix)> =
            self.weights().iter().map(|(_, n, m)| (n, m)).collect();
        encode_container(KIND_CHECKPOINT, meta, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = decode_container(bytes, KIND_CHECKPOINT)?;
        let meta: CheckpointMeta = serde_json::from_value(c.meta)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint metadata: {e}")))?;
        let vocab = Vocab::from_tokens(meta.vocab)?;
        ModelParams::from_tensors(meta.model, vocab, c.tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
