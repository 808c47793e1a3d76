use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{DType, GraphIR, OpKind, OpNode, TensorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    DanglingInput,
    MultipleProducers,
    UnknownTensor,
    DuplicateNode,
    IdMismatch,
    BadShape,
    MissingQuant,
    DataLength,
    DataDType,
    MissingData,
    Arity,
    OperandKind,
    Attribute,
    OutputNotProduced,
    InputProduced,
    ConstantProduced,
    Unproduced,
    Cycle,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::DanglingInput => "dangling input",
            Rule::MultipleProducers => "multiple producers",
            Rule::UnknownTensor => "unknown tensor",
            Rule::DuplicateNode => "duplicate node",
            Rule::IdMismatch => "tensor id mismatch",
            Rule::BadShape => "bad shape",
            Rule::MissingQuant => "missing quantization parameters",
            Rule::DataLength => "constant data length",
            Rule::DataDType => "constant data dtype",
            Rule::MissingData => "missing constant data",
            Rule::Arity => "arity",
            Rule::OperandKind => "operand kind",
            Rule::Attribute => "attribute",
            Rule::OutputNotProduced => "graph output not produced",
            Rule::InputProduced => "graph input produced by node",
            Rule::ConstantProduced => "constant produced by node",
            Rule::Unproduced => "unproduced tensor",
            Rule::Cycle => "cycle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    /// Offending node or tensor id.
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.rule.as_str(), self.subject)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule, subject: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule && v.subject == subject)
    }

    fn push(&mut self, rule: Rule, subject: &str, detail: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            subject: subject.to_string(),
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let lines: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&lines.join("; "))
    }
}

/// Checks every structural and per-node invariant. Violations are collected,
/// never raised.
pub fn validate(graph: &GraphIR) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_tensors(graph, &mut report);
    check_nodes(graph, &mut report);
    check_dataflow(graph, &mut report);
    report
}

fn check_tensors(graph: &GraphIR, report: &mut ValidationReport) {
    for (key, t) in &graph.tensors {
        if key != &t.id {
            report.push(Rule::IdMismatch, key, format!("entry holds tensor {:?}", t.id));
        }
        if t.shape.contains(&0) {
            report.push(Rule::BadShape, &t.id, format!("zero dimension in {:?}", t.shape));
        }
        let rank_ok = match t.kind {
            TensorKind::Bias => t.shape.len() == 1,
            TensorKind::Weight => matches!(t.shape.len(), 2 | 4),
            TensorKind::Input => matches!(t.shape.len(), 2 | 4),
            TensorKind::Activation | TensorKind::Output => matches!(t.shape.len(), 0 | 2 | 4),
        };
        if !rank_ok {
            report.push(Rule::BadShape, &t.id, format!("rank {} not allowed for {:?}", t.shape.len(), t.kind));
        }
        if t.dtype == DType::Int8 && t.quant.is_none() {
            report.push(Rule::MissingQuant, &t.id, "");
        }
        if let Some(q) = &t.quant {
            if let Err(e) = q.check() {
                report.push(Rule::MissingQuant, &t.id, e);
            }
        }
        match (&t.data, t.is_constant()) {
            (Some(data), true) => {
                if data.len() != t.num_elements() {
                    report.push(
                        Rule::DataLength,
                        &t.id,
                        format!("{} elements for shape {:?}", data.len(), t.shape),
                    );
                }
                if data.dtype() != t.dtype {
                    report.push(Rule::DataDType, &t.id, format!("{:?} data on {:?} tensor", data.dtype(), t.dtype));
                }
            }
            (None, true) => report.push(Rule::MissingData, &t.id, ""),
            (Some(_), false) => report.push(Rule::DataLength, &t.id, "non-constant tensor carries data"),
            (None, false) => {}
        }
    }
}

fn arity_ok(node: &OpNode) -> bool {
    let (ins, outs) = (node.inputs.len(), node.outputs.len());
    outs == 1
        && match node.kind {
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::FullyConnected => ins == 2 || ins == 3,
            OpKind::Add => ins == 2,
            OpKind::Concat => ins >= 2,
            OpKind::ReLU | OpKind::MaxPool2D | OpKind::AvgPool2D | OpKind::Flatten | OpKind::Softmax => ins == 1,
        }
}

fn check_nodes(graph: &GraphIR, report: &mut ValidationReport) {
    let mut seen = BTreeSet::new();
    for node in &graph.nodes {
        if !seen.insert(node.id.as_str()) {
            report.push(Rule::DuplicateNode, &node.id, "");
        }
        if !arity_ok(node) {
            report.push(
                Rule::Arity,
                &node.id,
                format!("{} with {} inputs and {} outputs", node.kind, node.inputs.len(), node.outputs.len()),
            );
            continue;
        }
        let a = &node.attrs;
        if a.stride.contains(&0) {
            report.push(Rule::Attribute, &node.id, "stride must be >= 1");
        }
        if node.kind.is_pool() {
            match a.kernel {
                Some(k) if k.iter().all(|&x| x >= 1) => {}
                Some(_) => report.push(Rule::Attribute, &node.id, "kernel must be >= 1"),
                None => report.push(Rule::Attribute, &node.id, "pooling requires a kernel"),
            }
        }
        if node.kind == OpKind::Concat && a.axis.is_none() {
            report.push(Rule::Attribute, &node.id, "Concat requires an axis");
        }
        // Operand roles: data operands are activations, weighted ops take a
        // weight and an optional bias.
        for (pos, input) in node.inputs.iter().enumerate() {
            let Some(t) = graph.tensors.get(input) else { continue };
            let expected_const = match (node.kind.has_weights(), pos) {
                (true, 1) => Some(TensorKind::Weight),
                (true, 2) => Some(TensorKind::Bias),
                _ => None,
            };
            match expected_const {
                Some(kind) if t.kind != kind => {
                    report.push(Rule::OperandKind, &node.id, format!("operand {pos} ({input}) must be {kind:?}"))
                }
                None if t.is_constant() => {
                    report.push(Rule::OperandKind, &node.id, format!("operand {pos} ({input}) must not be constant"))
                }
                _ => {}
            }
        }
    }
}

fn check_dataflow(graph: &GraphIR, report: &mut ValidationReport) {
    let mut producer_count: BTreeMap<&str, usize> = BTreeMap::new();
    for node in &graph.nodes {
        for out in &node.outputs {
            *producer_count.entry(out.as_str()).or_default() += 1;
            match graph.tensors.get(out) {
                None => report.push(Rule::UnknownTensor, out, format!("output of {}", node.id)),
                Some(t) if t.is_constant() => report.push(Rule::ConstantProduced, out, format!("by {}", node.id)),
                _ => {}
            }
        }
    }
    for (t, &n) in &producer_count {
        if n > 1 {
            report.push(Rule::MultipleProducers, t, format!("{n} producers"));
        }
    }
    let inputs: BTreeSet<&str> = graph.inputs.iter().map(String::as_str).collect();
    for id in &graph.inputs {
        match graph.tensors.get(id) {
            None => report.push(Rule::UnknownTensor, id, "graph input"),
            Some(t) if !t.has_shape() => report.push(Rule::BadShape, id, "graph input shape unknown"),
            _ => {}
        }
        if producer_count.contains_key(id.as_str()) {
            report.push(Rule::InputProduced, id, "");
        }
    }
    for id in &graph.outputs {
        if !producer_count.contains_key(id.as_str()) {
            report.push(Rule::OutputNotProduced, id, "");
        }
    }
    let mut dangling = BTreeSet::new();
    for node in &graph.nodes {
        for input in &node.inputs {
            let known_const = graph.tensors.get(input).is_some_and(|t| t.is_constant());
            if !known_const
                && !inputs.contains(input.as_str())
                && !producer_count.contains_key(input.as_str())
                && dangling.insert(input.as_str())
            {
                report.push(Rule::DanglingInput, input, format!("read by {}", node.id));
            }
        }
    }
    for t in graph.tensors.values() {
        if !t.is_constant()
            && !inputs.contains(t.id.as_str())
            && !producer_count.contains_key(t.id.as_str())
            && !dangling.contains(t.id.as_str())
        {
            report.push(Rule::Unproduced, &t.id, "");
        }
    }
    if graph.topo_order().is_none() {
        report.push(Rule::Cycle, &graph.name, "no topological order exists");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, TensorSpec};

    fn minimal() -> GraphIR {
        let mut b = GraphBuilder::new("minimal", &[1, 4, 4, 2]);
        let x = b.input_id();
        let y = b.conv2d(&x, 3, [1, 1], vec![0.5; 3 * 2], None, [1, 1], crate::graph::Padding::Valid);
        let y = b.relu(&y);
        let y = b.flatten(&y);
        let y = b.softmax(&y);
        b.finish(&[y]).unwrap()
    }

    #[test]
    fn minimal_graph_is_ok() {
        let g = minimal();
        let r = validate(&g);
        assert!(r.is_ok(), "{r}");
    }

    #[test]
    fn dangling_input_reported() {
        let mut g = minimal();
        g.nodes[1].inputs[0] = "t9".into();
        let r = validate(&g);
        assert!(r.has(Rule::DanglingInput, "t9"), "{r}");
        assert!(r.to_string().contains("dangling input t9"));
    }

    #[test]
    fn multiple_producers_reported() {
        let mut g = minimal();
        let first_out = g.nodes[0].outputs[0].clone();
        g.nodes[1].outputs[0] = first_out.clone();
        let r = validate(&g);
        assert!(r.has(Rule::MultipleProducers, &first_out), "{r}");
    }

    #[test]
    fn int8_without_quant_reported() {
        let mut g = minimal();
        let id = g.nodes[0].outputs[0].clone();
        g.tensors.get_mut(&id).unwrap().dtype = DType::Int8;
        assert!(validate(&g).has(Rule::MissingQuant, &id));
    }

    #[test]
    fn weight_length_and_attrs_checked() {
        let mut g = minimal();
        let w = g.nodes[0].inputs[1].clone();
        g.tensors.insert(w.clone(), TensorSpec::constant_f32(&w, TensorKind::Weight, vec![3, 1, 1, 2], vec![1.0; 5]));
        g.nodes[0].attrs.stride = [0, 1];
        let r = validate(&g);
        assert!(r.has(Rule::DataLength, &w));
        assert!(r.has(Rule::Attribute, &g.nodes[0].id));
    }

    #[test]
    fn cycle_detected() {
        let mut g = minimal();
        // relu reads its own downstream tensor
        let last = g.nodes[2].outputs[0].clone();
        g.nodes[1].inputs[0] = last;
        let r = validate(&g);
        assert!(r.violations.iter().any(|v| v.rule == Rule::Cycle), "{r}");
    }
}
