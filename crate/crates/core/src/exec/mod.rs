//! Reference interpreters, calibration and dataset evaluation.

mod calibrate;
mod dataset;
mod evaluate;
mod float;
mod int8;
mod window;

pub use calibrate::{calibrate, load_ranges, save_ranges, RangeMap, TensorRange};
pub use dataset::{load_dataset, save_dataset, Dataset, Sample};
pub use evaluate::{evaluate, read_records_csv, write_records_csv, write_records_json, Evaluation, InferenceRecord};
pub use float::{run_f32, run_f32_observed, run_f32_trace};
pub use int8::{run_int8, run_int8_trace, Int8Trace, QValue};

use crate::error::{Error, Result};
use crate::graph::GraphIR;

/// Checks the interpreter preconditions and returns a topological order.
fn check_ready(graph: &GraphIR, input_len: usize) -> Result<Vec<usize>> {
    if graph.inputs.len() != 1 {
        return Err(Error::ShapeMismatch {
            node: graph.name.clone(),
            detail: format!("interpreters take exactly one graph input, found {}", graph.inputs.len()),
        });
    }
    if let Some(t) = graph.tensors.values().find(|t| !t.has_shape()) {
        return Err(Error::ShapeMismatch {
            node: t.id.clone(),
            detail: "shape not inferred".into(),
        });
    }
    let input = &graph.tensors[&graph.inputs[0]];
    if input.num_elements() != input_len {
        return Err(Error::ShapeMismatch {
            node: input.id.clone(),
            detail: format!("input has {input_len} elements, graph expects {:?}", input.shape),
        });
    }
    graph.topo_order().ok_or_else(|| Error::Invalid(crate::graph::validate(graph)))
}

/// Numerically stable softmax over one row, accumulated in f64.
pub(crate) fn softmax(row: &[f32]) -> Vec<f32> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / sum) as f32).collect()
}
