//! Latency, energy, RAM and flash estimates for a deployment plan.
//!
//! Weighted ops are costed by MACs (two operations each). Pools, Add, Concat,
//! ReLU and Softmax have no MAC formula and are costed by a byte proxy: one
//! operation per input byte. Flatten and a ReLU fused into its producer cost
//! nothing. Every group pays `per_op_overhead_us` once.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphIR, OpKind, OpNode};
use crate::mapper::{DeploymentPlan, HardwareProfile, Target};
use crate::quant::flash_breakdown;

/// Multiply-accumulates of a weighted op; `None` for kinds costed by bytes.
pub fn op_macs(graph: &GraphIR, node: &OpNode) -> Option<u64> {
    let shape = |id: &str| &graph.tensors[id].shape;
    let out = shape(node.output());
    let w = node.weight_input().map(shape);
    let macs = match node.kind {
        OpKind::Conv2D => {
            let w = w?;
            out[1] * out[2] * out[3] * w[1] * w[2] * w[3]
        }
        OpKind::DepthwiseConv2D => {
            let w = w?;
            out[1] * out[2] * out[3] * w[1] * w[2]
        }
        OpKind::FullyConnected => {
            let w = w?;
            w[0] * w[1]
        }
        _ => return None,
    };
    Some(macs as u64)
}

fn input_bytes(graph: &GraphIR, node: &OpNode) -> u64 {
    node.inputs
        .iter()
        .map(|id| &graph.tensors[id])
        .filter(|t| !t.is_constant())
        .map(|t| t.byte_size() as u64)
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupCost {
    pub macs: u64,
    pub ops: u64,
    pub latency_us: f64,
    pub energy_uj: f64,
}

/// Cost of running `nodes` (indices into `graph.nodes`) as one kernel.
pub fn estimate_group(graph: &GraphIR, nodes: &[usize], target: Target, profile: &HardwareProfile) -> GroupCost {
    let mut macs = 0;
    let mut ops = 0;
    for (k, &i) in nodes.iter().enumerate() {
        let node = &graph.nodes[i];
        let fused_relu = k > 0 && node.kind == OpKind::ReLU;
        if fused_relu || node.kind == OpKind::Flatten {
            continue;
        }
        match op_macs(graph, node) {
            Some(m) => {
                macs += m;
                ops += 2 * m;
            }
            None => ops += input_bytes(graph, node),
        }
    }
    group_cost(macs, ops, target, profile)
}

pub fn group_cost(macs: u64, ops: u64, target: Target, profile: &HardwareProfile) -> GroupCost {
    let (rate, power) = match target {
        Target::Npu => (profile.npu_ops_per_s(), profile.npu_power_w),
        Target::Cpu => (profile.cpu_ops_per_s(), profile.cpu_power_w),
    };
    let latency_us = ops as f64 / rate * 1e6 + profile.per_op_overhead_us;
    GroupCost {
        macs,
        ops,
        latency_us,
        energy_uj: latency_us * power,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBreakdown {
    pub group: String,
    pub target: Target,
    pub macs: u64,
    pub latency_us: f64,
    pub energy_uj: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetFlags {
    pub ram_ok: bool,
    pub flash_ok: bool,
    pub deadline_ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// Schedule makespan.
    pub latency_ms: f64,
    /// Sum of group latencies, i.e. the makespan without CPU/NPU overlap.
    pub serial_latency_ms: f64,
    /// Group energies plus idle power over the makespan.
    pub energy_mj: f64,
    pub idle_energy_mj: f64,
    /// Arena peak plus runtime overhead.
    pub ram_peak_bytes: u64,
    pub flash_bytes: u64,
    pub per_group_breakdown: Vec<GroupBreakdown>,
    pub budget_flags: BudgetFlags,
}

/// Totals for `plan`, which must have been built from `qgraph`.
pub fn estimate_deployment(qgraph: &GraphIR, plan: &DeploymentPlan, profile: &HardwareProfile) -> CostEstimate {
    let per_group_breakdown: Vec<GroupBreakdown> = plan
        .groups
        .iter()
        .map(|g| {
            let nodes: Vec<usize> = g
                .nodes
                .iter()
                .map(|id| qgraph.node_index(id).expect("plan matches graph"))
                .collect();
            let c = estimate_group(qgraph, &nodes, g.target, profile);
            GroupBreakdown {
                group: g.id.clone(),
                target: g.target,
                macs: c.macs,
                latency_us: c.latency_us,
                energy_uj: c.energy_uj,
            }
        })
        .collect();
    let makespan_us = plan.timeline.iter().map(|e| e.end_us).fold(0.0, f64::max);
    let serial_us: f64 = per_group_breakdown.iter().map(|g| g.latency_us).sum();
    let idle_uj = profile.idle_power_w * makespan_us;
    let active_uj: f64 = per_group_breakdown.iter().map(|g| g.energy_uj).sum();
    let ram_peak_bytes = plan.memory.arena_bytes + profile.runtime_overhead_bytes;
    let flash_bytes = flash_breakdown(qgraph, profile.per_op_metadata_bytes as usize).total() as u64;
    let latency_ms = makespan_us / 1000.0;
    CostEstimate {
        latency_ms,
        serial_latency_ms: serial_us / 1000.0,
        energy_mj: (active_uj + idle_uj) / 1000.0,
        idle_energy_mj: idle_uj / 1000.0,
        ram_peak_bytes,
        flash_bytes,
        per_group_breakdown,
        budget_flags: BudgetFlags {
            ram_ok: ram_peak_bytes <= profile.ram_budget_bytes,
            flash_ok: flash_bytes <= profile.flash_budget_bytes,
            deadline_ok: latency_ms <= profile.deadline_ms(),
        },
    }
}

/// One CSV row per (model, dataset, stage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub model: String,
    pub dataset: String,
    pub stage: String,
    pub latency_ms: f64,
    pub energy_mj: f64,
    pub ram_peak_bytes: u64,
    pub flash_bytes: u64,
    pub ram_ok: bool,
    pub flash_ok: bool,
    pub deadline_ok: bool,
}

impl CostRow {
    pub fn new(model: &str, dataset: &str, stage: &str, e: &CostEstimate) -> Self {
        CostRow {
            model: model.into(),
            dataset: dataset.into(),
            stage: stage.into(),
            latency_ms: e.latency_ms,
            energy_mj: e.energy_mj,
            ram_peak_bytes: e.ram_peak_bytes,
            flash_bytes: e.flash_bytes,
            ram_ok: e.budget_flags.ram_ok,
            flash_ok: e.budget_flags.flash_ok,
            deadline_ok: e.budget_flags.deadline_ok,
        }
    }
}

pub fn write_cost_csv(rows: &[CostRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
