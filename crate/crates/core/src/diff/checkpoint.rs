//! `ASKC1` checkpoint files: magic line, little-endian u64 manifest length,
//! JSON manifest, then every tensor as little-endian f32 in manifest order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"ASKC1\n";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

pub fn write_checkpoint(
    path: &Path,
    params: &ParamStore<f32>,
    meta: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        tensors: params
            .iter()
            .map(|(n, t)| Entry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut buf = Vec::with_capacity(json.len() + 4 * params.num_values() + 16);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ParamStore<f32>, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::Corrupt {
        kind: "checkpoint",
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let m = CHECKPOINT_MAGIC.len();
    if bytes.len() < m + 8 || &bytes[..m] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing ASKC1 header"));
    }
    let len = u64::from_le_bytes(bytes[m..m + 8].try_into().expect("8 bytes")) as usize;
    let body = m + 8;
    if bytes.len() < body + len {
        return Err(corrupt("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[body..body + len])
        .map_err(|e| corrupt(&format!("bad manifest: {e}")))?;
    let mut off = body + len;
    let mut store = ParamStore::new();
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let end = off + 4 * n;
        if end > bytes.len() {
            return Err(corrupt(&format!("truncated data for tensor {}", e.name)));
        }
        let data = bytes[off..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(e.name, Tensor::new(e.shape, data)?);
        off = end;
    }
    if off != bytes.len() {
        return Err(corrupt("trailing bytes after tensor data"));
    }
    Ok((store, manifest.meta))
}
