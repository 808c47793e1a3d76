use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub input: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<&[f32]> {
        self.samples.iter().map(|s| s.input.as_slice()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    sample_id: String,
    file: String,
    label: usize,
}

/// Writes `<dir>/index.csv` plus one raw little-endian Float32 file per sample.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let index = dir.join(INDEX_FILE);
    let mut w = csv::Writer::from_path(&index)?;
    for s in &dataset.samples {
        let file = format!("{}.f32", s.id);
        let bytes: Vec<u8> = s.input.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        w.serialize(IndexRow {
            sample_id: s.id.clone(),
            file,
            label: s.label,
        })?;
    }
    w.flush().map_err(|e| Error::io(&index, e))?;
    Ok(())
}

/// Loads a dataset directory. With `expected_len`, every sample must hold that
/// many Float32 values.
pub fn load_dataset(dir: &Path, expected_len: Option<usize>) -> Result<Dataset> {
    let index = dir.join(INDEX_FILE);
    let bad = |detail: String| Error::Dataset {
        path: index.clone(),
        detail,
    };
    let mut r = csv::Reader::from_path(&index).map_err(|e| bad(e.to_string()))?;
    let mut samples = Vec::new();
    for (line, row) in r.deserialize::<IndexRow>().enumerate() {
        let row = row.map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        let path = dir.join(&row.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Dataset {
                path,
                detail: format!("{} bytes is not a whole number of Float32 values", bytes.len()),
            });
        }
        let input: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(n) = expected_len.filter(|&n| n != input.len()) {
            return Err(Error::Dataset {
                path,
                detail: format!("{} values, model input expects {n}", input.len()),
            });
        }
        samples.push(Sample {
            id: row.sample_id,
            input,
            label: row.label,
        });
    }
    Ok(Dataset { samples })
}
