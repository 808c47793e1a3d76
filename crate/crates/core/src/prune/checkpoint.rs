//! Weight checkpoints for fine-tuning between prune stages.
//!
//! A checkpoint is a JSON index plus a binary blob laid out exactly like the
//! model blob: every constant tensor in id order, little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{read_blob_tensor, BlobRange, DType, GraphIR};

const CHECKPOINT_FORMAT: &str = "tinysat-checkpoint";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub tensor: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
    pub blob: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    format: String,
    blob: String,
    tensors: Vec<CheckpointEntry>,
}

pub fn export_checkpoint(graph: &GraphIR) -> Checkpoint {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for t in graph.constants() {
        let bytes = t.data.as_ref().map(|d| d.to_le_bytes()).unwrap_or_default();
        entries.push(CheckpointEntry {
            tensor: t.id.clone(),
            dtype: t.dtype,
            shape: t.shape.clone(),
            offset: blob.len(),
            length: bytes.len(),
        });
        blob.extend_from_slice(&bytes);
    }
    Checkpoint { entries, blob }
}

/// Replaces the constant payloads of `graph` with the checkpoint's. Every
/// constant must appear once with matching dtype and shape; the error names
/// the first tensor that does not.
pub fn import_checkpoint(graph: &GraphIR, ckpt: &Checkpoint) -> Result<GraphIR> {
    let mismatch = |tensor: &str, detail: String| Error::Checkpoint {
        tensor: tensor.to_string(),
        detail,
    };
    let mut out = graph.clone();
    let constants: Vec<_> = graph.constants().collect();
    for (i, t) in constants.iter().enumerate() {
        let Some(e) = ckpt.entries.get(i) else {
            return Err(mismatch(&t.id, "missing from checkpoint".into()));
        };
        if e.tensor != t.id {
            let detail = if ckpt.entries.iter().any(|x| x.tensor == t.id) {
                format!("out of order, found {} in its place", e.tensor)
            } else {
                "missing from checkpoint".into()
            };
            return Err(mismatch(&t.id, detail));
        }
        if e.dtype != t.dtype {
            return Err(mismatch(&t.id, format!("dtype {:?}, model has {:?}", e.dtype, t.dtype)));
        }
        if e.shape != t.shape {
            return Err(mismatch(&t.id, format!("shape {:?}, model has {:?}", e.shape, t.shape)));
        }
        let range = BlobRange {
            offset: e.offset,
            length: e.length,
        };
        let data = read_blob_tensor(&ckpt.blob, range, e.dtype, &e.shape, &t.id)
            .map_err(|err| mismatch(&t.id, err.to_string()))?;
        out.tensors.get_mut(&t.id).unwrap().data = Some(data);
    }
    if let Some(extra) = ckpt.entries.get(constants.len()) {
        return Err(mismatch(&extra.tensor, "not a constant of this model".into()));
    }
    Ok(out)
}

/// Writes `<path>` (index) and the sibling `.bin` blob.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let blob_path = path.with_extension("bin");
    let index = Index {
        format: CHECKPOINT_FORMAT.into(),
        blob: blob_path.file_name().unwrap().to_string_lossy().into_owned(),
        tensors: ckpt.entries.clone(),
    };
    let mut text = serde_json::to_string_pretty(&index).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    fs::write(&blob_path, &ckpt.blob).map_err(|e| Error::io(&blob_path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let index: Index = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if index.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint {
            tensor: String::new(),
            detail: format!("{}: format {:?} is not a checkpoint", path.display(), index.format),
        });
    }
    let blob_path = path.with_file_name(&index.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    Ok(Checkpoint {
        entries: index.tensors,
        blob,
    })
}
