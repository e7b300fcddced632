//! Checkpoint container: magic, format version, JSON header length, JSON
//! header, then every tensor as little-endian `f32` in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::Mat;
use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SVCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: String,
    pub arch: serde_json::Value,
    pub seed: u64,
    pub corpus_hash: String,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
}

impl CheckpointHeader {
    pub fn new(kind: &str, arch: serde_json::Value, seed: u64, corpus_hash: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            arch,
            seed,
            corpus_hash: corpus_hash.to_string(),
            extra: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }
}

pub fn save_checkpoint(path: &Path, mut header: CheckpointHeader, ps: &ParamStore) -> Result<()> {
    header.tensors = ps.iter().map(|(n, v)| TensorInfo { name: n.to_string(), shape: [v.nrows(), v.ncols()] }).collect();
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + 4 * ps.n_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, v) in ps.iter() {
        for &x in v.iter() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint and checks its kind. Tensors come back in stored order.
pub fn load_checkpoint(path: &Path, kind: &str) -> Result<(CheckpointHeader, ParamStore)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.kind != kind {
        return Err(bad(&format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    let mut off = 12 + hlen;
    let mut ps = ParamStore::new();
    for t in &header.tensors {
        let n = t.shape[0] * t.shape[1];
        let raw = bytes.get(off..off + 4 * n).ok_or_else(|| bad("truncated tensor data"))?;
        let vals: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        ps.add(t.name.clone(), Mat::from_shape_vec((t.shape[0], t.shape[1]), vals).expect("shape"));
        off += 4 * n;
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header, ps))
}

/// Copies loaded tensors into a freshly built store with identical layout.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {}", target.len(), loaded.len())));
    }
    let ids: Vec<_> = target.ids().collect();
    for id in ids {
        let name = target.name(id).to_string();
        let src = loaded.get(id);
        if loaded.name(id) != name || src.dim() != target.get(id).dim() {
            return Err(Error::Checkpoint(format!("tensor {name} does not match the architecture")));
        }
        target.get_mut(id).assign(src);
    }
    Ok(())
}
