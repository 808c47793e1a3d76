use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{compute_qparams, per_channel_symmetric, quantize_tensor, FixedMultiplier, QuantMode, QuantParams};
use crate::error::{Error, Result};
use crate::exec::RangeMap;
use crate::graph::{validate, DType, GraphIR, OpKind, TensorData, TensorKind};

/// Per output channel of a weighted op: Int32 bias, Int32 multiplier, Int8 shift.
pub const CHANNEL_TABLE_BYTES: usize = 9;
/// Per standalone requantization multiplier (ReLU, Add, ...): multiplier + shift.
const MULTIPLIER_BYTES: usize = 5;
/// Per quantized activation tensor: Float32 scale + Int32 zero point.
pub const TENSOR_QPARAM_BYTES: usize = 8;

/// Lowers a Float32 graph to INT8.
///
/// Weights become per-channel symmetric Int8, activations per-tensor asymmetric
/// Int8, biases Int32 at scale `S_in * S_w[c]`. MaxPool and Flatten outputs
/// inherit their input's parameters; Softmax stays Float32. Requantization
/// multipliers are stored on each node.
pub fn quantize_graph(graph: &GraphIR, ranges: &RangeMap) -> Result<GraphIR> {
    let report = validate(graph);
    if !report.is_ok() {
        return Err(Error::Invalid(report));
    }
    if let Some(t) = graph.tensors.values().find(|t| t.dtype != DType::Float32) {
        return Err(Error::DTypeMismatch {
            location: t.id.clone(),
            detail: "quantization expects a Float32 graph".into(),
        });
    }
    if let Some(t) = graph.tensors.values().find(|t| !t.has_shape()) {
        return Err(Error::ShapeMismatch {
            node: t.id.clone(),
            detail: "shape not inferred".into(),
        });
    }
    let order = graph.topo_order().expect("validated graph is acyclic");
    let range_of = |id: &str| ranges.get(id).ok_or_else(|| Error::MissingRange(id.to_string()));

    let mut act: BTreeMap<String, QuantParams> = BTreeMap::new();
    for id in &graph.inputs {
        act.insert(id.clone(), compute_qparams(range_of(id)?, QuantMode::Asymmetric));
    }
    for &i in &order {
        let node = &graph.nodes[i];
        let out = node.output();
        match node.kind {
            OpKind::Softmax => {}
            OpKind::MaxPool2D | OpKind::Flatten => {
                let qp = act[node.data_input()].clone();
                act.insert(out.to_string(), qp);
            }
            _ => {
                act.insert(out.to_string(), compute_qparams(range_of(out)?, QuantMode::Asymmetric));
            }
        }
    }

    let mut q = graph.clone();
    for (id, qp) in &act {
        let t = q.tensors.get_mut(id).expect("activation exists");
        t.dtype = DType::Int8;
        t.quant = Some(qp.clone());
    }

    for &i in &order {
        let node = &graph.nodes[i];
        let in_scale = |k: usize| act[&node.inputs[k]].scale();
        let out_scale = || act.get(node.output()).map(QuantParams::scale);
        let requant = match node.kind {
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::FullyConnected => {
                let wid = node.weight_input().unwrap();
                let wt = &graph.tensors[wid];
                let values = wt.data.as_ref().and_then(TensorData::as_f32).expect("Float32 weights");
                let axis = if node.kind == OpKind::DepthwiseConv2D { 3 } else { 0 };
                let wq = per_channel_symmetric(values, &wt.shape, axis);
                let codes = quantize_tensor(values, &wt.shape, &wq);
                let s_in = in_scale(0);
                let bias_scales: Vec<f64> = wq.scale.iter().map(|s| s * s_in).collect();
                if let Some(bid) = node.bias_input() {
                    let b = graph.tensors[bid].data.as_ref().and_then(TensorData::as_f32).expect("Float32 bias");
                    let qb: Vec<i32> = b
                        .iter()
                        .zip(&bias_scales)
                        .map(|(&v, s)| (v as f64 / s).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                        .collect();
                    let bt = q.tensors.get_mut(bid).unwrap();
                    bt.dtype = DType::Int32;
                    bt.quant = Some(QuantParams::per_channel(bias_scales.clone(), 0));
                    bt.data = Some(TensorData::I32(qb));
                }
                let s_out = out_scale().expect("weighted op output is quantized");
                let wt = q.tensors.get_mut(wid).unwrap();
                wt.dtype = DType::Int8;
                wt.quant = Some(wq);
                wt.data = Some(TensorData::I8(codes));
                bias_scales.iter().map(|s| FixedMultiplier::from_real(s / s_out)).collect()
            }
            OpKind::ReLU | OpKind::AvgPool2D => vec![FixedMultiplier::from_real(in_scale(0) / out_scale().unwrap())],
            OpKind::Add | OpKind::Concat => {
                let s_out = out_scale().unwrap();
                (0..node.inputs.len())
                    .map(|k| FixedMultiplier::from_real(in_scale(k) / s_out))
                    .collect()
            }
            OpKind::MaxPool2D | OpKind::Flatten | OpKind::Softmax => Vec::new(),
        };
        q.nodes[i].requant = requant;
    }
    Ok(q)
}

/// Flash footprint split into payload and metadata.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashBreakdown {
    /// Constant tensor payloads. For Int8 graphs only the weight codes; biases
    /// live in the channel tables.
    pub weight_bytes: usize,
    /// Per-channel bias/multiplier/shift tables and standalone multipliers.
    pub channel_table_bytes: usize,
    /// Activation scale/zero-point pairs.
    pub tensor_param_bytes: usize,
    /// Fixed per-op kernel descriptor.
    pub op_metadata_bytes: usize,
}

impl FlashBreakdown {
    pub fn total(&self) -> usize {
        self.weight_bytes + self.channel_table_bytes + self.tensor_param_bytes + self.op_metadata_bytes
    }

    /// Everything except the weight payload.
    pub fn metadata(&self) -> usize {
        self.total() - self.weight_bytes
    }
}

pub fn flash_breakdown(graph: &GraphIR, per_op_metadata_bytes: usize) -> FlashBreakdown {
    let op_metadata_bytes = graph.nodes.len() * per_op_metadata_bytes;
    if !graph.is_quantized() {
        return FlashBreakdown {
            weight_bytes: graph.constants().map(|t| t.byte_size()).sum(),
            op_metadata_bytes,
            ..FlashBreakdown::default()
        };
    }
    let weight_bytes = graph
        .tensors
        .values()
        .filter(|t| t.kind == TensorKind::Weight)
        .map(|t| t.byte_size())
        .sum();
    let channel_table_bytes = graph
        .nodes
        .iter()
        .map(|n| {
            if n.kind.has_weights() {
                n.requant.len() * CHANNEL_TABLE_BYTES
            } else {
                n.requant.len() * MULTIPLIER_BYTES
            }
        })
        .sum();
    let tensor_param_bytes = graph
        .tensors
        .values()
        .filter(|t| !t.is_constant() && t.dtype == DType::Int8)
        .count()
        * TENSOR_QPARAM_BYTES;
    FlashBreakdown {
        weight_bytes,
        channel_table_bytes,
        tensor_param_bytes,
        op_metadata_bytes,
    }
}
