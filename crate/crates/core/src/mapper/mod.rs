//! Hardware-aware mapping of a quantized graph: NPU/CPU partitioning,
//! Conv+ReLU fusion, two-resource scheduling and activation arena planning.

mod memory;
mod profile;
mod schedule;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{estimate_deployment, estimate_group, CostEstimate};
use crate::error::{Error, Result};
use crate::graph::{validate, GraphIR, OpKind};
use crate::quant::flash_breakdown;

pub use memory::{arena_size, assign_offsets, overlapping_pair, plan_offsets, Buffer, Lifetime, MemoryPlan};
pub use profile::HardwareProfile;
pub use schedule::{
    count_orders, index_order, makespan, priority_order, schedule, simulate_order, Slot, Target, Task, EXACT_ORDER_LIMIT,
};

/// Nodes executed as one kernel on one target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: String,
    pub target: Target,
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: BTreeMap<String, Target>,
    /// In topological order of their first node.
    pub groups: Vec<Group>,
}

impl Partition {
    /// Multi-node groups, in the form the INT8 executor takes.
    pub fn fused(&self) -> Vec<Vec<String>> {
        self.groups.iter().filter(|g| g.nodes.len() > 1).map(|g| g.nodes.clone()).collect()
    }
}

fn require_quantized(qgraph: &GraphIR) -> Result<()> {
    if !qgraph.is_quantized() {
        return Err(Error::NotQuantized(format!("{} has Float32 weights", qgraph.name)));
    }
    let report = validate(qgraph);
    if !report.is_ok() {
        return Err(Error::Invalid(report));
    }
    if let Some(t) = qgraph.tensors.values().find(|t| !t.has_shape()) {
        return Err(Error::ShapeMismatch {
            node: t.id.clone(),
            detail: "shape not inferred".into(),
        });
    }
    Ok(())
}

/// Assigns every node to the NPU if the profile supports its kind, else the
/// CPU, then fuses each Conv2D/DepthwiseConv2D/FullyConnected with a directly
/// following ReLU on the same target when the ReLU is the intermediate
/// tensor's only consumer and that tensor is not a graph output.
pub fn partition_and_fuse(qgraph: &GraphIR, profile: &HardwareProfile) -> Result<Partition> {
    require_quantized(qgraph)?;
    let target_of = |kind: OpKind| {
        if profile.npu_supported_ops.contains(&kind) {
            Target::Npu
        } else {
            Target::Cpu
        }
    };
    let assignment: BTreeMap<String, Target> = qgraph.nodes.iter().map(|n| (n.id.clone(), target_of(n.kind))).collect();
    let consumers = qgraph.consumers();
    let mut taken = vec![false; qgraph.nodes.len()];
    let mut groups = Vec::new();
    for i in qgraph.topo_order().expect("validated graph is acyclic") {
        if taken[i] {
            continue;
        }
        let node = &qgraph.nodes[i];
        let target = assignment[&node.id];
        let mut members = vec![i];
        if node.kind.has_weights() && !qgraph.outputs.iter().any(|o| o == node.output()) {
            if let Some(&[j]) = consumers.get(node.output()).map(Vec::as_slice) {
                let next = &qgraph.nodes[j];
                if next.kind == OpKind::ReLU && assignment[&next.id] == target {
                    members.push(j);
                    taken[j] = true;
                }
            }
        }
        let ids: Vec<String> = members.iter().map(|&m| qgraph.nodes[m].id.clone()).collect();
        groups.push(Group {
            id: ids.join("+"),
            target,
            nodes: ids,
        });
    }
    Ok(Partition { assignment, groups })
}

/// For every group, the groups producing its inputs.
pub fn group_dependencies(qgraph: &GraphIR, groups: &[Group]) -> Vec<Vec<usize>> {
    let group_of = node_groups(qgraph, groups);
    let producers = qgraph.producers();
    groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let mut preds: Vec<usize> = group
                .nodes
                .iter()
                .flat_map(|id| &qgraph.node(id).unwrap().inputs)
                .filter_map(|t| producers.get(t.as_str()))
                .map(|&p| group_of[p])
                .filter(|&p| p != g)
                .collect();
            preds.sort_unstable();
            preds.dedup();
            preds
        })
        .collect()
}

fn node_groups(qgraph: &GraphIR, groups: &[Group]) -> Vec<usize> {
    let mut group_of = vec![usize::MAX; qgraph.nodes.len()];
    for (g, group) in groups.iter().enumerate() {
        for id in &group.nodes {
            group_of[qgraph.node_index(id).expect("group node exists")] = g;
        }
    }
    group_of
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub group: String,
    pub target: Target,
    pub start_us: f64,
    pub end_us: f64,
}

/// Arena lifetimes of every activation tensor, graph inputs and outputs
/// included. Tensors internal to a fused group never reach the arena.
pub fn lifetimes(qgraph: &GraphIR, groups: &[Group], slots: &[Slot]) -> Vec<Lifetime> {
    let group_of = node_groups(qgraph, groups);
    let mut steps: Vec<usize> = (0..groups.len()).collect();
    steps.sort_by(|&a, &b| slots[a].start_us.total_cmp(&slots[b].start_us).then(a.cmp(&b)));
    let mut step_of = vec![0; groups.len()];
    for (s, &g) in steps.iter().enumerate() {
        step_of[g] = s;
    }
    let span = makespan(slots);
    let last_step = groups.len().saturating_sub(1);
    let producers = qgraph.producers();
    let consumers = qgraph.consumers();
    let mut out = Vec::new();
    for t in qgraph.tensors.values().filter(|t| !t.is_constant()) {
        let producer = producers.get(t.id.as_str()).map(|&p| group_of[p]);
        let readers: Vec<usize> = consumers
            .get(t.id.as_str())
            .map(|cs| cs.iter().map(|&c| group_of[c]).collect())
            .unwrap_or_default();
        if let Some(p) = producer {
            if !readers.is_empty() && readers.iter().all(|&r| r == p) {
                continue;
            }
        }
        let (first, start) = match producer {
            Some(p) => (step_of[p], slots[p].start_us),
            None => (0, 0.0),
        };
        let (mut last, mut end) = (first, producer.map_or(0.0, |p| slots[p].end_us));
        for &r in &readers {
            last = last.max(step_of[r]);
            end = end.max(slots[r].end_us);
        }
        if qgraph.outputs.contains(&t.id) {
            last = last_step;
            end = span;
        }
        out.push(Lifetime {
            tensor: t.id.clone(),
            size: t.byte_size() as u64,
            first_step: first,
            last_step: last,
            start_us: start,
            end_us: end,
        });
    }
    out
}

pub fn plan_memory(qgraph: &GraphIR, groups: &[Group], slots: &[Slot]) -> MemoryPlan {
    plan_offsets(&lifetimes(qgraph, groups, slots))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub model: String,
    pub profile: String,
    pub assignment: BTreeMap<String, Target>,
    pub groups: Vec<Group>,
    /// Sorted by start time, then group order.
    pub timeline: Vec<TimelineEntry>,
    pub memory: MemoryPlan,
    pub flash_bytes: u64,
    pub estimates: CostEstimate,
}

/// Partitions, fuses, schedules and memory-plans `qgraph`, then costs the result.
pub fn plan_deployment(qgraph: &GraphIR, profile: &HardwareProfile) -> Result<DeploymentPlan> {
    profile.check()?;
    let partition = partition_and_fuse(qgraph, profile)?;
    Ok(build_plan(qgraph, partition, profile))
}

/// Baseline for graphs the NPU cannot run (Float32 stages): every node is its
/// own group on the CPU.
pub fn plan_cpu_reference(graph: &GraphIR, profile: &HardwareProfile) -> Result<DeploymentPlan> {
    profile.check()?;
    let report = validate(graph);
    if !report.is_ok() {
        return Err(Error::Invalid(report));
    }
    let order = graph.topo_order().expect("validated graph is acyclic");
    let partition = Partition {
        assignment: graph.nodes.iter().map(|n| (n.id.clone(), Target::Cpu)).collect(),
        groups: order
            .iter()
            .map(|&i| Group {
                id: graph.nodes[i].id.clone(),
                target: Target::Cpu,
                nodes: vec![graph.nodes[i].id.clone()],
            })
            .collect(),
    };
    Ok(build_plan(graph, partition, profile))
}

fn build_plan(qgraph: &GraphIR, partition: Partition, profile: &HardwareProfile) -> DeploymentPlan {
    let deps = group_dependencies(qgraph, &partition.groups);
    let tasks: Vec<Task> = partition
        .groups
        .iter()
        .zip(deps)
        .map(|(g, preds)| {
            let nodes: Vec<usize> = g.nodes.iter().map(|id| qgraph.node_index(id).unwrap()).collect();
            Task {
                target: g.target,
                latency_us: estimate_group(qgraph, &nodes, g.target, profile).latency_us,
                preds,
            }
        })
        .collect();
    let slots = schedule(&tasks, profile.transfer_latency_us);
    let mut timeline: Vec<(usize, TimelineEntry)> = partition
        .groups
        .iter()
        .zip(&slots)
        .enumerate()
        .map(|(i, (g, s))| {
            let entry = TimelineEntry {
                group: g.id.clone(),
                target: g.target,
                start_us: s.start_us,
                end_us: s.end_us,
            };
            (i, entry)
        })
        .collect();
    timeline.sort_by(|a, b| a.1.start_us.total_cmp(&b.1.start_us).then(a.0.cmp(&b.0)));
    let memory = plan_memory(qgraph, &partition.groups, &slots);
    let mut plan = DeploymentPlan {
        model: qgraph.name.clone(),
        profile: profile.name.clone(),
        assignment: partition.assignment,
        groups: partition.groups,
        timeline: timeline.into_iter().map(|(_, e)| e).collect(),
        memory,
        flash_bytes: flash_breakdown(qgraph, profile.per_op_metadata_bytes as usize).total() as u64,
        estimates: CostEstimate::default(),
    };
    plan.estimates = estimate_deployment(qgraph, &plan, profile);
    plan
}

impl DeploymentPlan {
    pub fn fused(&self) -> Vec<Vec<String>> {
        self.groups.iter().filter(|g| g.nodes.len() > 1).map(|g| g.nodes.clone()).collect()
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

    /// Human-readable timeline, memory and budget summary.
    pub fn report_table(&self) -> String {
        let mut s = String::new();
        let e = &self.estimates;
        let _ = writeln!(s, "model {}  profile {}", self.model, self.profile);
        let _ = writeln!(s, "{:<28} {:<6} {:>12} {:>12}", "group", "target", "start_us", "end_us");
        for t in &self.timeline {
            let _ = writeln!(s, "{:<28} {:<6} {:>12.3} {:>12.3}", t.group, t.target.name(), t.start_us, t.end_us);
        }
        let _ = writeln!(s, "{:<28} {:>12} {:>12}", "tensor", "offset", "bytes");
        let mut buffers: Vec<_> = self.memory.buffers.iter().collect();
        buffers.sort_by_key(|(id, b)| (b.offset, id.as_str()));
        for (id, b) in buffers {
            let _ = writeln!(s, "{id:<28} {:>12} {:>12}", b.offset, b.size);
        }
        let _ = writeln!(
            s,
            "arena {} B (no reuse {} B)  ram {} B  flash {} B",
            self.memory.arena_bytes, self.memory.total_activation_bytes, e.ram_peak_bytes, e.flash_bytes
        );
        let _ = writeln!(
            s,
            "latency {:.3} ms (serial {:.3} ms)  energy {:.3} mJ  ram_ok {}  flash_ok {}  deadline_ok {}",
            e.latency_ms, e.serial_latency_ms, e.energy_mj, e.budget_flags.ram_ok, e.budget_flags.flash_ok, e.budget_flags.deadline_ok
        );
        s
    }
}
