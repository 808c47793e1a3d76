use std::collections::BTreeMap;

use super::{infer_shapes, GraphIR, OpAttrs, OpKind, OpNode, Padding, TensorKind, TensorSpec};
use crate::error::Result;

/// Incremental construction of Float32 graphs with generated ids.
///
/// Nodes are named `<prefix><n>` per kind (`conv1`, `relu2`, ...). A node's
/// output tensor is `<node>.out`, its weight `<node>.w` and its bias `<node>.b`.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    graph: GraphIR,
    counters: BTreeMap<&'static str, usize>,
}

fn prefix(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Conv2D => "conv",
        OpKind::DepthwiseConv2D => "dwconv",
        OpKind::FullyConnected => "fc",
        OpKind::ReLU => "relu",
        OpKind::MaxPool2D => "maxpool",
        OpKind::AvgPool2D => "avgpool",
        OpKind::Add => "add",
        OpKind::Concat => "concat",
        OpKind::Flatten => "flatten",
        OpKind::Softmax => "softmax",
    }
}

impl GraphBuilder {
    pub fn new(name: &str, input_shape: &[usize]) -> Self {
        let mut graph = GraphIR::new(name);
        let mut input = TensorSpec::activation("input", TensorKind::Input);
        input.shape = input_shape.to_vec();
        graph.tensors.insert("input".into(), input);
        graph.inputs.push("input".into());
        GraphBuilder {
            graph,
            counters: BTreeMap::new(),
        }
    }

    pub fn input_id(&self) -> String {
        "input".to_string()
    }

    fn next_id(&mut self, kind: OpKind) -> String {
        let p = prefix(kind);
        let n = self.counters.entry(p).or_default();
        *n += 1;
        format!("{p}{n}")
    }

    fn push(&mut self, kind: OpKind, mut inputs: Vec<String>, attrs: OpAttrs, constants: Vec<TensorSpec>) -> String {
        let id = self.next_id(kind);
        for mut c in constants {
            let cid = format!("{id}.{}", c.id);
            c.id = cid.clone();
            inputs.push(cid.clone());
            self.graph.tensors.insert(cid, c);
        }
        let out = format!("{id}.out");
        self.graph
            .tensors
            .insert(out.clone(), TensorSpec::activation(&out, TensorKind::Activation));
        self.graph
            .nodes
            .push(OpNode::new(id, kind, inputs, vec![out.clone()]).with_attrs(attrs));
        out
    }

    fn weighted(
        &mut self,
        kind: OpKind,
        x: &str,
        weight_shape: Vec<usize>,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        attrs: OpAttrs,
    ) -> String {
        assert_eq!(
            weights.len(),
            weight_shape.iter().product::<usize>(),
            "weight length does not match {weight_shape:?}"
        );
        let mut constants = vec![TensorSpec::constant_f32("w", TensorKind::Weight, weight_shape, weights)];
        if let Some(b) = bias {
            constants.push(TensorSpec::constant_f32("b", TensorKind::Bias, vec![b.len()], b));
        }
        self.push(kind, vec![x.to_string()], attrs, constants)
    }

    /// Conv2D with `(out, kh, kw, in)` weights; `in` is derived from the weight length.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        x: &str,
        out_channels: usize,
        kernel: [usize; 2],
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        stride: [usize; 2],
        padding: Padding,
    ) -> String {
        let in_channels = weights.len() / (out_channels * kernel[0] * kernel[1]);
        let attrs = OpAttrs {
            stride,
            padding,
            ..OpAttrs::default()
        };
        let shape = vec![out_channels, kernel[0], kernel[1], in_channels];
        self.weighted(OpKind::Conv2D, x, shape, weights, bias, attrs)
    }

    /// Depthwise convolution with `(1, kh, kw, channels)` weights.
    pub fn depthwise_conv2d(
        &mut self,
        x: &str,
        kernel: [usize; 2],
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        stride: [usize; 2],
        padding: Padding,
    ) -> String {
        let channels = weights.len() / (kernel[0] * kernel[1]);
        let attrs = OpAttrs {
            stride,
            padding,
            ..OpAttrs::default()
        };
        let shape = vec![1, kernel[0], kernel[1], channels];
        self.weighted(OpKind::DepthwiseConv2D, x, shape, weights, bias, attrs)
    }

    /// Fully connected layer with `(out, in)` weights.
    pub fn fully_connected(&mut self, x: &str, out_features: usize, weights: Vec<f32>, bias: Option<Vec<f32>>) -> String {
        let shape = vec![out_features, weights.len() / out_features];
        self.weighted(OpKind::FullyConnected, x, shape, weights, bias, OpAttrs::default())
    }

    pub fn relu(&mut self, x: &str) -> String {
        self.push(OpKind::ReLU, vec![x.to_string()], OpAttrs::default(), vec![])
    }

    pub fn max_pool(&mut self, x: &str, kernel: [usize; 2], stride: [usize; 2], padding: Padding) -> String {
        let attrs = OpAttrs {
            kernel: Some(kernel),
            stride,
            padding,
            axis: None,
        };
        self.push(OpKind::MaxPool2D, vec![x.to_string()], attrs, vec![])
    }

    pub fn avg_pool(&mut self, x: &str, kernel: [usize; 2], stride: [usize; 2], padding: Padding) -> String {
        let attrs = OpAttrs {
            kernel: Some(kernel),
            stride,
            padding,
            axis: None,
        };
        self.push(OpKind::AvgPool2D, vec![x.to_string()], attrs, vec![])
    }

    pub fn add(&mut self, a: &str, b: &str) -> String {
        self.push(OpKind::Add, vec![a.to_string(), b.to_string()], OpAttrs::default(), vec![])
    }

    pub fn concat(&mut self, xs: &[&str], axis: usize) -> String {
        let attrs = OpAttrs {
            axis: Some(axis),
            ..OpAttrs::default()
        };
        self.push(OpKind::Concat, xs.iter().map(|s| s.to_string()).collect(), attrs, vec![])
    }

    pub fn flatten(&mut self, x: &str) -> String {
        self.push(OpKind::Flatten, vec![x.to_string()], OpAttrs::default(), vec![])
    }

    pub fn softmax(&mut self, x: &str) -> String {
        self.push(OpKind::Softmax, vec![x.to_string()], OpAttrs::default(), vec![])
    }

    /// Marks `outputs` as graph outputs and runs shape inference.
    pub fn finish(mut self, outputs: &[String]) -> Result<GraphIR> {
        for id in outputs {
            if let Some(t) = self.graph.tensors.get_mut(id) {
                t.kind = TensorKind::Output;
            }
            self.graph.outputs.push(id.clone());
        }
        infer_shapes(&self.graph).map(|(g, _)| g)
    }

    /// The graph as built so far, without shape inference.
    pub fn into_graph(self) -> GraphIR {
        self.graph
    }
}
