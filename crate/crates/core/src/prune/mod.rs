//! Structured iterative pruning.
//!
//! Each stage ranks the output filters of every prunable Conv2D and the output
//! neurons of every prunable FullyConnected layer by L2 norm and masks the
//! lowest-scoring ones. Stage sizes are fractions of the layer's original
//! filter count, rounded down. Between stages an external trainer may
//! fine-tune the masked model through the checkpoint interface.
//!
//! A removed channel is followed downstream through ReLU, pooling, Flatten and
//! DepthwiseConv2D until it reaches the input side of a Conv2D or
//! FullyConnected layer. Layers whose channels would reach an Add, a Concat, a
//! Softmax or a graph output are not prunable.

mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, validate, DType, GraphIR, OpKind, TensorData};

pub use checkpoint::{export_checkpoint, import_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointEntry};

/// Default schedule: 10% of the filters, then 5% twice.
pub const DEFAULT_SCHEDULE: [f64; 3] = [0.10, 0.05, 0.05];

// Guards floor(fraction * count) against products like 0.29 * 100 = 28.999999999999996.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterScore {
    pub layer_id: String,
    pub filter_index: usize,
    pub l2_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneBasis {
    /// Stage fractions apply to the filter count before any pruning.
    OriginalCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub schedule: Vec<f64>,
    pub basis: PruneBasis,
    pub original_counts: BTreeMap<String, usize>,
    /// Per completed stage: layer id to the sorted filter indices removed in that stage.
    pub stages: Vec<BTreeMap<String, Vec<usize>>>,
    /// Layer id to keep-mask over output filters (`true` = kept).
    pub masks: BTreeMap<String, Vec<bool>>,
}

/// Where a pruned layer's channels end up downstream.
#[derive(Debug, Clone, PartialEq)]
enum ChannelUse {
    /// Depthwise conv: weights sliced on axis 3, bias and output channels follow.
    Depthwise(usize),
    /// Conv2D reading the channels: weights sliced on axis 3.
    ConvInput(usize),
    /// FullyConnected reading the channels, possibly through a Flatten of a
    /// tensor with this many channels per position.
    FcInput { node: usize, flattened_channels: Option<usize> },
}

#[derive(Debug, Clone)]
struct Layer {
    node: usize,
    filters: usize,
    uses: Vec<ChannelUse>,
}

/// Prunable layers and, for the others, why they are excluded.
fn analyze(graph: &GraphIR) -> (BTreeMap<String, Layer>, BTreeMap<String, String>) {
    let consumers = graph.consumers();
    let mut layers = BTreeMap::new();
    let mut excluded = BTreeMap::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        if !matches!(node.kind, OpKind::Conv2D | OpKind::FullyConnected) {
            continue;
        }
        let Some(filters) = node.weight_input().and_then(|w| graph.tensors.get(w)).map(|t| t.shape[0]) else {
            continue;
        };
        match trace_uses(graph, &consumers, node.output()) {
            Ok(uses) => {
                layers.insert(node.id.clone(), Layer { node: i, filters, uses });
            }
            Err(reason) => {
                excluded.insert(node.id.clone(), reason);
            }
        }
    }
    (layers, excluded)
}

fn trace_uses(graph: &GraphIR, consumers: &BTreeMap<&str, Vec<usize>>, start: &str) -> std::result::Result<Vec<ChannelUse>, String> {
    let mut uses = Vec::new();
    let mut stack: Vec<(String, Option<usize>)> = vec![(start.to_string(), None)];
    let mut seen = BTreeSet::new();
    while let Some((tensor, flat)) = stack.pop() {
        if !seen.insert(tensor.clone()) {
            continue;
        }
        if graph.outputs.contains(&tensor) {
            return Err(format!("channels reach graph output {tensor}"));
        }
        for &c in consumers.get(tensor.as_str()).map(Vec::as_slice).unwrap_or_default() {
            let n = &graph.nodes[c];
            if n.data_input() != tensor {
                return Err(format!("{tensor} is a non-data operand of {}", n.id));
            }
            match n.kind {
                OpKind::ReLU | OpKind::MaxPool2D | OpKind::AvgPool2D => stack.push((n.output().to_string(), flat)),
                OpKind::DepthwiseConv2D => {
                    uses.push(ChannelUse::Depthwise(c));
                    stack.push((n.output().to_string(), flat));
                }
                OpKind::Flatten => {
                    let shape = &graph.tensors[&tensor].shape;
                    let flat = if shape.len() == 4 { Some(shape[3]) } else { flat };
                    stack.push((n.output().to_string(), flat));
                }
                OpKind::Conv2D if flat.is_none() => uses.push(ChannelUse::ConvInput(c)),
                OpKind::FullyConnected => uses.push(ChannelUse::FcInput {
                    node: c,
                    flattened_channels: flat,
                }),
                OpKind::Conv2D | OpKind::Add | OpKind::Concat | OpKind::Softmax => {
                    return Err(format!("channels feed {} {}", n.kind, n.id));
                }
            }
        }
    }
    uses.sort_by_key(|u| match u {
        ChannelUse::Depthwise(n) | ChannelUse::ConvInput(n) | ChannelUse::FcInput { node: n, .. } => *n,
    });
    Ok(uses)
}

/// Layers excluded from pruning, with the reason.
pub fn excluded_layers(graph: &GraphIR) -> BTreeMap<String, String> {
    analyze(graph).1
}

/// Ids of the prunable layers with their filter counts.
pub fn prunable_layers(graph: &GraphIR) -> BTreeMap<String, usize> {
    analyze(graph).0.into_iter().map(|(id, l)| (id, l.filters)).collect()
}

fn f32_data<'a>(graph: &'a GraphIR, id: &str) -> Result<&'a [f32]> {
    graph.tensors[id]
        .data
        .as_ref()
        .and_then(TensorData::as_f32)
        .ok_or_else(|| Error::Prune(format!("tensor {id} is not Float32; prune before quantizing")))
}

fn layer_scores(graph: &GraphIR, layer_id: &str, node: usize) -> Result<Vec<FilterScore>> {
    let wid = graph.nodes[node].weight_input().expect("prunable layers have weights");
    let w = f32_data(graph, wid)?;
    let filters = graph.tensors[wid].shape[0];
    let per = w.len() / filters;
    Ok(w.chunks(per)
        .enumerate()
        .map(|(f, row)| FilterScore {
            layer_id: layer_id.to_string(),
            filter_index: f,
            l2_norm: row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt(),
        })
        .collect())
}

/// L2 norm of every output filter (Conv2D) or neuron (FullyConnected) of the
/// prunable layers, ordered by layer id then filter index.
pub fn rank_filters(graph: &GraphIR) -> Result<Vec<FilterScore>> {
    let mut scores = Vec::new();
    for (id, layer) in analyze(graph).0 {
        scores.extend(layer_scores(graph, &id, layer.node)?);
    }
    Ok(scores)
}

/// Indices of the `count` lowest-norm candidates; ties go to the lower index.
pub fn lowest_scores(scores: &[FilterScore], candidates: impl Iterator<Item = usize>, count: usize) -> Vec<usize> {
    let mut c: Vec<usize> = candidates.collect();
    c.sort_by(|&a, &b| scores[a].l2_norm.total_cmp(&scores[b].l2_norm).then(a.cmp(&b)));
    let mut picked: Vec<usize> = c.into_iter().take(count).collect();
    picked.sort_unstable();
    picked
}

impl PrunePlan {
    /// An empty plan over the prunable layers of `graph`.
    pub fn new(graph: &GraphIR, schedule: &[f64]) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::Prune("schedule is empty".into()));
        }
        if let Some(f) = schedule.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::Prune(format!("stage fraction {f} outside (0, 1)")));
        }
        let total: f64 = schedule.iter().sum();
        if total >= 1.0 {
            return Err(Error::Prune(format!("schedule removes {total} of every layer")));
        }
        let original_counts = prunable_layers(graph);
        let masks = original_counts.iter().map(|(id, &n)| (id.clone(), vec![true; n])).collect();
        Ok(PrunePlan {
            schedule: schedule.to_vec(),
            basis: PruneBasis::OriginalCount,
            original_counts,
            stages: Vec::new(),
            masks,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.stages.len() >= self.schedule.len()
    }

    /// Number of filters stage `stage` removes from a layer with `original` filters.
    pub fn stage_removals(&self, stage: usize, original: usize) -> usize {
        (self.schedule[stage] * original as f64 + FLOOR_EPS).floor() as usize
    }

    /// Ranks `graph` (the current, possibly fine-tuned weights) and masks the
    /// next stage's lowest-L2 filters among those still kept.
    pub fn next_stage(&mut self, graph: &GraphIR) -> Result<&BTreeMap<String, Vec<usize>>> {
        let stage = self.stages.len();
        if self.is_complete() {
            return Err(Error::Prune(format!("all {} stages already applied", self.schedule.len())));
        }
        let layers = analyze(graph).0;
        let mut removals = BTreeMap::new();
        for (id, &original) in &self.original_counts {
            let layer = layers
                .get(id)
                .ok_or_else(|| Error::Prune(format!("layer {id} is not prunable in this graph")))?;
            if layer.filters != original {
                return Err(Error::Prune(format!(
                    "layer {id} has {} filters, plan expects {original}",
                    layer.filters
                )));
            }
            let mask = &self.masks[id];
            let count = self.stage_removals(stage, original);
            let kept = mask.iter().filter(|&&k| k).count();
            if count >= kept {
                return Err(Error::Prune(format!("stage {stage} would remove all filters of {id}")));
            }
            let scores = layer_scores(graph, id, layer.node)?;
            let picked = lowest_scores(&scores, (0..original).filter(|&f| mask[f]), count);
            removals.insert(id.clone(), picked);
        }
        for (id, picked) in &removals {
            let mask = self.masks.get_mut(id).unwrap();
            for &f in picked {
                mask[f] = false;
            }
        }
        self.stages.push(removals);
        Ok(self.stages.last().unwrap())
    }

    /// Kept filter indices of a layer.
    pub fn kept(&self, layer: &str) -> Vec<usize> {
        self.masks[layer].iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    pub fn removed_count(&self) -> usize {
        self.masks.values().map(|m| m.iter().filter(|&&k| !k).count()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Runs every stage of `schedule` with masking in between and no weight
/// updates, i.e. the one-shot plan.
pub fn build_prune_plan(graph: &GraphIR, schedule: &[f64]) -> Result<PrunePlan> {
    let mut plan = PrunePlan::new(graph, schedule)?;
    let mut current = graph.clone();
    while !plan.is_complete() {
        plan.next_stage(&current)?;
        current = apply_masks(graph, &plan)?;
    }
    Ok(plan)
}

fn checked_layers(graph: &GraphIR, plan: &PrunePlan) -> Result<Vec<(Layer, Vec<bool>)>> {
    let layers = analyze(graph).0;
    plan.masks
        .iter()
        .map(|(id, mask)| {
            let layer = layers
                .get(id)
                .ok_or_else(|| Error::Prune(format!("layer {id} is not prunable in this graph")))?;
            if mask.len() != layer.filters {
                return Err(Error::Prune(format!(
                    "mask of {id} has {} entries, layer has {} filters",
                    mask.len(),
                    layer.filters
                )));
            }
            Ok((layer.clone(), mask.clone()))
        })
        .collect()
}

fn zero_channels(graph: &mut GraphIR, id: &str, shape_axis: usize, mask: &[bool]) -> Result<()> {
    let shape = graph.tensors[id].shape.clone();
    let inner: usize = shape[shape_axis + 1..].iter().product();
    let t = graph.tensors.get_mut(id).unwrap();
    let Some(TensorData::F32(data)) = t.data.as_mut() else {
        return Err(Error::Prune(format!("tensor {id} is not Float32")));
    };
    for (i, v) in data.iter_mut().enumerate() {
        if !mask[(i / inner) % shape[shape_axis]] {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Zeroes the weights and biases of masked filters (and of the depthwise
/// channels they feed). Shapes are unchanged.
pub fn apply_masks(graph: &GraphIR, plan: &PrunePlan) -> Result<GraphIR> {
    let layers = checked_layers(graph, plan)?;
    let mut out = graph.clone();
    for (layer, mask) in &layers {
        let node = graph.nodes[layer.node].clone();
        zero_channels(&mut out, node.weight_input().unwrap(), 0, mask)?;
        if let Some(b) = node.bias_input() {
            zero_channels(&mut out, b, 0, mask)?;
        }
        for u in &layer.uses {
            if let ChannelUse::Depthwise(d) = u {
                let dw = graph.nodes[*d].clone();
                zero_channels(&mut out, dw.weight_input().unwrap(), 3, mask)?;
                if let Some(b) = dw.bias_input() {
                    zero_channels(&mut out, b, 0, mask)?;
                }
            }
        }
    }
    Ok(out)
}

/// Keeps the entries of `axis` listed in `keep`.
fn slice_axis(data: &[f32], shape: &[usize], axis: usize, keep: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * keep.len() * inner);
    for o in 0..outer {
        for &k in keep {
            let start = (o * shape[axis] + k) * inner;
            out.extend_from_slice(&data[start..start + inner]);
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = keep.len();
    (out, new_shape)
}

fn slice_tensor(graph: &mut GraphIR, id: &str, axis: usize, keep: &[usize]) -> Result<()> {
    let t = &graph.tensors[id];
    if t.dtype != DType::Float32 {
        return Err(Error::Prune(format!("tensor {id} is not Float32")));
    }
    let (data, shape) = slice_axis(f32_data(graph, id)?, &t.shape, axis, keep);
    let t = graph.tensors.get_mut(id).unwrap();
    t.data = Some(TensorData::F32(data));
    t.shape = shape;
    Ok(())
}

/// Physically removes masked filters, slices every downstream consumer and
/// re-infers shapes.
pub fn materialize(graph: &GraphIR, plan: &PrunePlan) -> Result<GraphIR> {
    let layers = checked_layers(graph, plan)?;
    let mut out = graph.clone();
    for (layer, mask) in &layers {
        let keep: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if keep.len() == mask.len() {
            continue;
        }
        let node = graph.nodes[layer.node].clone();
        slice_tensor(&mut out, node.weight_input().unwrap(), 0, &keep)?;
        if let Some(b) = node.bias_input() {
            slice_tensor(&mut out, b, 0, &keep)?;
        }
        for u in &layer.uses {
            match *u {
                ChannelUse::Depthwise(d) => {
                    let dw = &graph.nodes[d];
                    slice_tensor(&mut out, dw.weight_input().unwrap(), 3, &keep)?;
                    if let Some(b) = dw.bias_input() {
                        slice_tensor(&mut out, b, 0, &keep)?;
                    }
                }
                ChannelUse::ConvInput(c) => slice_tensor(&mut out, graph.nodes[c].weight_input().unwrap(), 3, &keep)?,
                ChannelUse::FcInput { node: c, flattened_channels } => {
                    let wid = graph.nodes[c].weight_input().unwrap();
                    let features = graph.tensors[wid].shape[1];
                    let cols: Vec<usize> = match flattened_channels {
                        // NHWC flatten: feature index = (y * W + x) * C + channel
                        Some(ch) => (0..features).filter(|f| mask[f % ch]).collect(),
                        None => keep.clone(),
                    };
                    slice_tensor(&mut out, wid, 1, &cols)?;
                }
            }
        }
    }
    out.clear_activation_shapes();
    let (out, _) = infer_shapes(&out).map_err(|e| Error::Prune(format!("materialized graph is inconsistent: {e}")))?;
    debug_assert!(validate(&out).is_ok());
    Ok(out)
}

#[cfg(test)]
mod tests;
