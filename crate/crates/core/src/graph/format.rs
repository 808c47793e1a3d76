//! On-disk model format: a JSON manifest next to a little-endian weight blob.
//!
//! ```text
//! <name>.json   {"format", "version", "name", "inputs", "outputs", "blob", "blob_bytes",
//!                "tensors": [{"id", "kind", "dtype", "shape", "quant"?, "data"?: {"offset", "length"}}],
//!                "nodes":   [{"id", "kind", "inputs", "outputs", "attrs"?, "requant"?}]}
//! <name>.bin    constant payloads concatenated in manifest tensor order
//! ```
//!
//! `length` and `offset` are in bytes. Float32 is IEEE-754, Int32 is
//! little-endian, Int8 is one signed byte per element.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate, DType, GraphIR, OpAttrs, OpKind, OpNode, TensorData, TensorKind, TensorSpec};
use crate::error::{Error, Result};
use crate::quant::{FixedMultiplier, QuantParams};

pub const MANIFEST_FORMAT: &str = "tinysat-model";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub blob_bytes: usize,
    pub tensors: Vec<ManifestTensor>,
    pub nodes: Vec<ManifestNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTensor {
    pub id: String,
    pub kind: TensorKind,
    pub dtype: DType,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<BlobRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRange {
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestNode {
    pub id: String,
    pub kind: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub attrs: OpAttrs,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requant: Vec<FixedMultiplier>,
}

/// Builds the manifest and blob for `graph` without touching the filesystem.
pub fn encode_model(graph: &GraphIR, blob_name: &str) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let tensors = graph
        .tensors
        .values()
        .map(|t| {
            let data = t.data.as_ref().map(|d| {
                let bytes = d.to_le_bytes();
                let range = BlobRange {
                    offset: blob.len(),
                    length: bytes.len(),
                };
                blob.extend_from_slice(&bytes);
                range
            });
            ManifestTensor {
                id: t.id.clone(),
                kind: t.kind,
                dtype: t.dtype,
                shape: t.shape.clone(),
                quant: t.quant.clone(),
                data,
            }
        })
        .collect();
    let nodes = graph
        .nodes
        .iter()
        .map(|n| ManifestNode {
            id: n.id.clone(),
            kind: n.kind.name().to_string(),
            inputs: n.inputs.clone(),
            outputs: n.outputs.clone(),
            attrs: n.attrs.clone(),
            requant: n.requant.clone(),
        })
        .collect();
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        name: graph.name.clone(),
        inputs: graph.inputs.clone(),
        outputs: graph.outputs.clone(),
        blob: blob_name.to_string(),
        blob_bytes: blob.len(),
        tensors,
        nodes,
    };
    (manifest, blob)
}

fn blob_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `<path>` (manifest) and the sibling `.bin` blob.
pub fn save_model(graph: &GraphIR, path: &Path) -> Result<()> {
    let report = validate(graph);
    if !report.is_ok() {
        return Err(Error::Invalid(report));
    }
    let blob_path = blob_path_for(path);
    let blob_name = blob_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (manifest, blob) = encode_model(graph, &blob_name);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

/// Reads a model written by [`save_model`] (or by an external exporter
/// following the same manifest layout).
pub fn load_model(path: &Path) -> Result<GraphIR> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        location: format!("line {} column {}", e.line(), e.column()),
        detail: e.to_string(),
    })?;
    let malformed = |location: String, detail: String| Error::Manifest {
        path: path.to_path_buf(),
        location,
        detail,
    };
    if manifest.format != MANIFEST_FORMAT {
        return Err(malformed("format".into(), format!("expected {MANIFEST_FORMAT:?}, got {:?}", manifest.format)));
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(malformed("version".into(), format!("unsupported version {}", manifest.version)));
    }
    let blob_path = path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::BlobLength {
            location: blob_path.display().to_string(),
            detail: format!("manifest declares {} bytes, blob has {}", manifest.blob_bytes, blob.len()),
        });
    }
    decode_model(&manifest, &blob, &path.display().to_string())
}

pub(crate) fn decode_model(manifest: &Manifest, blob: &[u8], origin: &str) -> Result<GraphIR> {
    let mut graph = GraphIR::new(manifest.name.clone());
    graph.inputs = manifest.inputs.clone();
    graph.outputs = manifest.outputs.clone();
    for (i, mt) in manifest.tensors.iter().enumerate() {
        let location = format!("{origin}: tensors[{i}] ({})", mt.id);
        let data = match mt.data {
            Some(range) => Some(read_blob_tensor(blob, range, mt.dtype, &mt.shape, &location)?),
            None => None,
        };
        if graph.tensors.contains_key(&mt.id) {
            return Err(Error::Manifest {
                path: origin.into(),
                location,
                detail: "duplicate tensor id".into(),
            });
        }
        graph.tensors.insert(
            mt.id.clone(),
            TensorSpec {
                id: mt.id.clone(),
                shape: mt.shape.clone(),
                dtype: mt.dtype,
                quant: mt.quant.clone(),
                kind: mt.kind,
                data,
            },
        );
    }
    for (i, mn) in manifest.nodes.iter().enumerate() {
        let kind: OpKind = mn.kind.parse().map_err(|kind| Error::UnsupportedOp {
            kind,
            location: format!("{origin}: nodes[{i}] ({})", mn.id),
        })?;
        let mut node = OpNode::new(mn.id.clone(), kind, mn.inputs.clone(), mn.outputs.clone()).with_attrs(mn.attrs.clone());
        node.requant = mn.requant.clone();
        graph.nodes.push(node);
    }
    Ok(graph)
}

/// Slices and decodes one constant from a blob, checking the byte range against
/// the blob and the declared shape.
pub fn read_blob_tensor(blob: &[u8], range: BlobRange, dtype: DType, shape: &[usize], location: &str) -> Result<TensorData> {
    let expected = shape.iter().product::<usize>() * dtype.size_bytes();
    if range.length != expected {
        return Err(Error::BlobLength {
            location: location.to_string(),
            detail: format!("{} bytes declared, shape {shape:?} of {dtype:?} needs {expected}", range.length),
        });
    }
    let end = range.offset.checked_add(range.length).filter(|&e| e <= blob.len());
    let Some(end) = end else {
        return Err(Error::BlobLength {
            location: location.to_string(),
            detail: format!(
                "range {}..{} exceeds blob of {} bytes",
                range.offset,
                range.offset + range.length,
                blob.len()
            ),
        });
    };
    Ok(TensorData::from_le_bytes(dtype, &blob[range.offset..end]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, Padding};

    fn sample() -> GraphIR {
        let mut b = GraphBuilder::new("sample", &[1, 6, 6, 2]);
        let x = b.input_id();
        let w: Vec<f32> = (0..4 * 9 * 2).map(|i| (i as f32 * 0.37).sin()).collect();
        let y = b.conv2d(&x, 4, [3, 3], w, Some(vec![0.1, -0.2, 0.3, f32::MIN_POSITIVE]), [1, 1], Padding::Same);
        let y = b.relu(&y);
        let y = b.max_pool(&y, [2, 2], [2, 2], Padding::Valid);
        let y = b.flatten(&y);
        let y = b.fully_connected(&y, 3, (0..36 * 3).map(|i| i as f32 / 7.0).collect(), None);
        let y = b.softmax(&y);
        b.finish(&[y]).unwrap()
    }

    #[test]
    fn roundtrip_preserves_structure_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.json");
        let g = sample();
        save_model(&g, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(g, back);
        let (_, blob_a) = encode_model(&g, "x.bin");
        let (_, blob_b) = encode_model(&back, "x.bin");
        assert_eq!(blob_a, blob_b);
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.json");
        save_model(&sample(), &path).unwrap();
        let bin = path.with_extension("bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes.pop();
        fs::write(&bin, bytes).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, Error::BlobLength { .. }), "{err}");
        assert!(err.to_string().contains("blob length mismatch"));
    }

    #[test]
    fn unknown_op_kind_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.json");
        save_model(&sample(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replacen("\"ReLU\"", "\"LSTM\"", 1);
        fs::write(&path, text).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported op kind \"LSTM\""), "{err}");
        assert!(err.to_string().contains("nodes[1]"), "{err}");
    }

    #[test]
    fn malformed_manifest_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        fs::write(&path, "{\"format\": \"tinysat-model\", \"version\": 1,").unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, Error::Manifest { .. }));
        assert!(err.to_string().contains("line"));
    }
}
