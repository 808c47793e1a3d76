use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run_f32_observed;
use crate::error::{Error, Result};
use crate::graph::GraphIR;

/// Observed `[min(R), max(R)]` of one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorRange {
    pub min: f64,
    pub max: f64,
}

impl TensorRange {
    pub fn new(min: f64, max: f64) -> Self {
        assert!(min.is_finite() && max.is_finite() && min <= max, "invalid range [{min}, {max}]");
        TensorRange { min, max }
    }

    pub fn of(values: &[f32]) -> Option<Self> {
        let mut it = values.iter().map(|&v| v as f64);
        let first = it.next()?;
        let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(TensorRange::new(lo, hi))
    }

    pub fn merge(self, other: TensorRange) -> TensorRange {
        TensorRange {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// Zero-width range (e.g. a constant-zero activation).
    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }
}

/// Calibration output: tensor id to observed range.
pub type RangeMap = BTreeMap<String, TensorRange>;

/// Runs the Float32 interpreter over `samples` and records the elementwise
/// min/max of every activation; constants get the range of their data.
pub fn calibrate<S: AsRef<[f32]>>(graph: &GraphIR, samples: &[S]) -> Result<RangeMap> {
    if samples.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let mut ranges = RangeMap::new();
    for t in graph.constants() {
        if let Some(r) = t.data.as_ref().and_then(|d| d.as_f32()).and_then(TensorRange::of) {
            ranges.insert(t.id.clone(), r);
        }
    }
    for sample in samples {
        run_f32_observed(graph, sample.as_ref(), &mut |id, values| {
            if let Some(r) = TensorRange::of(values) {
                ranges
                    .entry(id.to_string())
                    .and_modify(|cur| *cur = cur.merge(r))
                    .or_insert(r);
            }
        })?;
    }
    Ok(ranges)
}

pub fn save_ranges(ranges: &RangeMap, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(ranges).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads ranges as JSON `{"tensor_id": {"min": .., "max": ..}}`.
pub fn load_ranges(path: &Path) -> Result<RangeMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ranges: RangeMap = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    for (id, r) in &ranges {
        if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
            return Err(Error::config(format!("{}: {id}", path.display()), format!("invalid range [{}, {}]", r.min, r.max)));
        }
    }
    Ok(ranges)
}
