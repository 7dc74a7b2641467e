//! Model files: 8-byte magic, u64 little-endian manifest length, a JSON
//! manifest, then every parameter as little-endian f64 in row-major order.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, NetConfig, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CSIMODL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    /// Byte offset into the blob.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    config: NetConfig,
    params: Vec<Entry>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let p = &model.params;
    let mut entries = Vec::with_capacity(p.len());
    let mut blob = Vec::with_capacity(p.size() * 8);
    for id in p.ids() {
        let v = p.value(id);
        entries.push(Entry { name: p.name(id).to_string(), shape: [v.nrows(), v.ncols()], offset: blob.len() as u64 });
        for x in v.iter() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest { format: FORMAT_VERSION, config: model.config(), params: entries };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// `path` is used only in diagnostics.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Model> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: String::from_utf8_lossy(MAGIC).into() });
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated { expected: 16, found: bytes.len() as u64 });
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = 16u64.saturating_add(mlen);
    if (bytes.len() as u64) < body {
        return Err(Error::Truncated { expected: body, found: bytes.len() as u64 });
    }
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..body as usize]).map_err(|e| Error::Malformed(format!("manifest: {e}")))?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: manifest.format, expected: FORMAT_VERSION });
    }
    let blob = &bytes[body as usize..];
    let needed: u64 = manifest
        .params
        .iter()
        .map(|e| e.offset + (e.shape[0] * e.shape[1] * 8) as u64)
        .max()
        .unwrap_or(0);
    if (blob.len() as u64) < needed {
        return Err(Error::Truncated { expected: body + needed, found: bytes.len() as u64 });
    }
    let mut store = ParamStore::new();
    for e in &manifest.params {
        let n = e.shape[0] * e.shape[1];
        let start = e.offset as usize;
        let vals: Vec<f64> = blob[start..start + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let arr = Array2::from_shape_vec((e.shape[0], e.shape[1]), vals).map_err(|err| Error::Malformed(err.to_string()))?;
        store.add(&e.name, arr)?;
    }
    Model::from_parts(&manifest.config, store)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes, path)
}
