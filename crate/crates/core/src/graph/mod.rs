//! ConvNet graph representation.
//!
//! A [`GraphIR`] is a DAG of [`OpNode`]s connected by named tensors. Activations
//! use NHWC layout with a fixed batch of 1. Conv2D weights are laid out
//! `(out, kh, kw, in)`, depthwise weights `(1, kh, kw, channels)` and fully
//! connected weights `(out, in)`. Transformations never mutate a graph in
//! place; they return a new one.

mod builder;
mod format;
mod shape;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::quant::{FixedMultiplier, QuantParams};

pub use builder::GraphBuilder;
pub use format::{encode_model, load_model, read_blob_tensor, save_model, BlobRange, Manifest, MANIFEST_FORMAT};
pub use shape::{infer_shapes, same_padding, spatial_out};
pub use validate::{validate, Rule, ValidationReport, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    Float32,
    Int8,
    Int32,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::Float32 | DType::Int32 => 4,
            DType::Int8 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Input,
    Weight,
    Bias,
    Activation,
    Output,
}

impl TensorKind {
    pub fn is_constant(self) -> bool {
        matches!(self, TensorKind::Weight | TensorKind::Bias)
    }
}

/// Constant payload of a weight or bias tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::Float32,
            TensorData::I8(_) => DType::Int8,
            TensorData::I32(_) => DType::Int32,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match self {
            TensorData::I8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match self {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    /// Little-endian byte encoding used by model blobs and checkpoints.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I8(v) => v.iter().map(|&x| x as u8).collect(),
            TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    /// Decodes `bytes`; the caller guarantees the length is a multiple of the dtype size.
    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::Float32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::Int8 => TensorData::I8(bytes.iter().map(|&b| b as i8).collect()),
            DType::Int32 => TensorData::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub id: String,
    /// NHWC or (N, F) for activations. Empty until shape inference has run.
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub quant: Option<QuantParams>,
    pub kind: TensorKind,
    pub data: Option<TensorData>,
}

impl TensorSpec {
    pub fn activation(id: impl Into<String>, kind: TensorKind) -> Self {
        TensorSpec {
            id: id.into(),
            shape: Vec::new(),
            dtype: DType::Float32,
            quant: None,
            kind,
            data: None,
        }
    }

    pub fn constant_f32(id: impl Into<String>, kind: TensorKind, shape: Vec<usize>, data: Vec<f32>) -> Self {
        TensorSpec {
            id: id.into(),
            shape,
            dtype: DType::Float32,
            quant: None,
            kind,
            data: Some(TensorData::F32(data)),
        }
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_size(&self) -> usize {
        self.num_elements() * self.dtype.size_bytes()
    }

    pub fn is_constant(&self) -> bool {
        self.kind.is_constant()
    }

    pub fn has_shape(&self) -> bool {
        !self.shape.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv2D,
    DepthwiseConv2D,
    FullyConnected,
    ReLU,
    MaxPool2D,
    AvgPool2D,
    Add,
    Concat,
    Flatten,
    Softmax,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Conv2D,
        OpKind::DepthwiseConv2D,
        OpKind::FullyConnected,
        OpKind::ReLU,
        OpKind::MaxPool2D,
        OpKind::AvgPool2D,
        OpKind::Add,
        OpKind::Concat,
        OpKind::Flatten,
        OpKind::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2D => "Conv2D",
            OpKind::DepthwiseConv2D => "DepthwiseConv2D",
            OpKind::FullyConnected => "FullyConnected",
            OpKind::ReLU => "ReLU",
            OpKind::MaxPool2D => "MaxPool2D",
            OpKind::AvgPool2D => "AvgPool2D",
            OpKind::Add => "Add",
            OpKind::Concat => "Concat",
            OpKind::Flatten => "Flatten",
            OpKind::Softmax => "Softmax",
        }
    }

    /// Ops that carry a weight tensor (and optionally a bias).
    pub fn has_weights(self) -> bool {
        matches!(
            self,
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::FullyConnected
        )
    }

    pub fn is_pool(self) -> bool {
        matches!(self, OpKind::MaxPool2D | OpKind::AvgPool2D)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Padding {
    #[default]
    #[serde(rename = "VALID")]
    Valid,
    #[serde(rename = "SAME")]
    Same,
}

fn default_stride() -> [usize; 2] {
    [1, 1]
}

fn is_unit_stride(s: &[usize; 2]) -> bool {
    *s == [1, 1]
}

fn is_valid_padding(p: &Padding) -> bool {
    *p == Padding::Valid
}

/// Kind-specific attributes. Convolution kernels come from the weight shape;
/// `kernel` is only read by the pooling ops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default = "default_stride", skip_serializing_if = "is_unit_stride")]
    pub stride: [usize; 2],
    #[serde(default, skip_serializing_if = "is_valid_padding")]
    pub padding: Padding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
}

impl Default for OpAttrs {
    fn default() -> Self {
        OpAttrs {
            kernel: None,
            stride: default_stride(),
            padding: Padding::Valid,
            axis: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub id: String,
    pub kind: OpKind,
    pub attrs: OpAttrs,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Fixed-point requantization multipliers, filled in by the quantizer.
    /// Weighted ops hold one per output channel, `Add`/`Concat` one per input,
    /// `ReLU`/`AvgPool2D` a single entry.
    pub requant: Vec<FixedMultiplier>,
}

impl OpNode {
    pub fn new(id: impl Into<String>, kind: OpKind, inputs: Vec<String>, outputs: Vec<String>) -> Self {
        OpNode {
            id: id.into(),
            kind,
            attrs: OpAttrs::default(),
            inputs,
            outputs,
            requant: Vec::new(),
        }
    }

    pub fn with_attrs(mut self, attrs: OpAttrs) -> Self {
        self.attrs = attrs;
        self
    }

    pub fn data_input(&self) -> &str {
        &self.inputs[0]
    }

    pub fn weight_input(&self) -> Option<&str> {
        if self.kind.has_weights() {
            self.inputs.get(1).map(String::as_str)
        } else {
            None
        }
    }

    pub fn bias_input(&self) -> Option<&str> {
        if self.kind.has_weights() {
            self.inputs.get(2).map(String::as_str)
        } else {
            None
        }
    }

    pub fn output(&self) -> &str {
        &self.outputs[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphIR {
    pub name: String,
    pub nodes: Vec<OpNode>,
    pub tensors: BTreeMap<String, TensorSpec>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl GraphIR {
    pub fn new(name: impl Into<String>) -> Self {
        GraphIR {
            name: name.into(),
            nodes: Vec::new(),
            tensors: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn tensor(&self, id: &str) -> Option<&TensorSpec> {
        self.tensors.get(id)
    }

    pub fn node(&self, id: &str) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Maps each produced tensor to the index of its (first) producing node.
    pub fn producers(&self) -> BTreeMap<&str, usize> {
        let mut map = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for out in &node.outputs {
                map.entry(out.as_str()).or_insert(i);
            }
        }
        map
    }

    /// Maps each tensor to the indices of the nodes reading it, in node order.
    pub fn consumers(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for input in &node.inputs {
                let entry = map.entry(input.as_str()).or_default();
                if entry.last() != Some(&i) {
                    entry.push(i);
                }
            }
        }
        map
    }

    /// Deterministic topological order (Kahn's algorithm, ready nodes taken in
    /// declaration order). Returns `None` if the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let producers = self.producers();
        let mut preds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.nodes.len()];
        let mut succs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for input in &node.inputs {
                if let Some(&p) = producers.get(input.as_str()) {
                    preds[i].insert(p);
                    succs[p].insert(i);
                }
            }
        }
        let mut indegree: Vec<usize> = preds.iter().map(BTreeSet::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &s in &succs[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    pub fn constants(&self) -> impl Iterator<Item = &TensorSpec> {
        self.tensors.values().filter(|t| t.is_constant())
    }

    /// Number of weight and bias elements.
    pub fn param_count(&self) -> usize {
        self.constants().map(TensorSpec::num_elements).sum()
    }

    /// True when the graph came out of the quantizer: every weight is Int8
    /// and at least one tensor is.
    pub fn is_quantized(&self) -> bool {
        let weights_int8 = self
            .tensors
            .values()
            .filter(|t| t.kind == TensorKind::Weight)
            .all(|t| t.dtype == DType::Int8);
        weights_int8 && self.tensors.values().any(|t| t.dtype == DType::Int8)
    }

    /// Node ids and edges, ignoring dtypes, shapes and payloads.
    pub fn topology(&self) -> Vec<(String, OpKind, Vec<String>, Vec<String>)> {
        self.nodes
            .iter()
            .map(|n| (n.id.clone(), n.kind, n.inputs.clone(), n.outputs.clone()))
            .collect()
    }

    /// Clears every non-input activation shape so inference can start over.
    pub(crate) fn clear_activation_shapes(&mut self) {
        let inputs: BTreeSet<&String> = self.inputs.iter().collect();
        for t in self.tensors.values_mut() {
            if !t.is_constant() && !inputs.contains(&t.id) {
                t.shape.clear();
            }
        }
    }
}
