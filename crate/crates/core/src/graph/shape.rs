use super::{validate, GraphIR, OpKind, OpNode, Padding};
use crate::error::{Error, Result};

/// Output length of one spatial axis.
///
/// VALID: `floor((in - kernel) / stride) + 1`; SAME: `ceil(in / stride)`.
pub fn spatial_out(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Valid => (input >= kernel).then(|| (input - kernel) / stride + 1),
        Padding::Same => Some(input.div_ceil(stride)),
    }
}

/// Zero padding before one spatial axis under SAME (the smaller half goes first).
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

/// Fills in every activation shape and returns the graph together with a
/// topological node order. Running it on its own output is a no-op.
pub fn infer_shapes(graph: &GraphIR) -> Result<(GraphIR, Vec<usize>)> {
    let report = validate(graph);
    if !report.is_ok() {
        return Err(Error::Invalid(report));
    }
    let order = graph.topo_order().expect("validated graph has a topological order");
    let mut out = graph.clone();
    out.clear_activation_shapes();
    for &i in &order {
        let node = &out.nodes[i];
        let shape = node_output_shape(&out, node)?;
        let id = node.output().to_string();
        out.tensors.get_mut(&id).expect("validated output tensor").shape = shape;
    }
    Ok((out, order))
}

fn mismatch(node: &OpNode, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        node: node.id.clone(),
        detail: detail.into(),
    }
}

fn shape_of<'a>(graph: &'a GraphIR, node: &OpNode, id: &str) -> Result<&'a [usize]> {
    let t = graph.tensor(id).ok_or_else(|| mismatch(node, format!("unknown tensor {id}")))?;
    if t.shape.is_empty() {
        return Err(mismatch(node, format!("shape of {id} is unknown")));
    }
    Ok(&t.shape)
}

fn expect_rank(node: &OpNode, shape: &[usize], rank: usize, what: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(mismatch(node, format!("{what} must have rank {rank}, got {shape:?}")));
    }
    if shape[0] != 1 {
        return Err(mismatch(node, format!("{what} batch must be 1, got {shape:?}")));
    }
    Ok(())
}

fn window_out(node: &OpNode, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
    let a = &node.attrs;
    let oh = spatial_out(h, kh, a.stride[0], a.padding);
    let ow = spatial_out(w, kw, a.stride[1], a.padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(mismatch(node, format!("kernel {kh}x{kw} larger than input {h}x{w} under VALID padding"))),
    }
}

fn node_output_shape(graph: &GraphIR, node: &OpNode) -> Result<Vec<usize>> {
    let x = shape_of(graph, node, node.data_input())?;
    match node.kind {
        OpKind::Conv2D | OpKind::DepthwiseConv2D => {
            expect_rank(node, x, 4, "input")?;
            let w = shape_of(graph, node, node.weight_input().unwrap())?;
            if w.len() != 4 {
                return Err(mismatch(node, format!("weight must have rank 4, got {w:?}")));
            }
            let (oh, ow) = window_out(node, x[1], x[2], w[1], w[2])?;
            let out_c = if node.kind == OpKind::Conv2D {
                if w[3] != x[3] {
                    return Err(mismatch(node, format!("weight in-channels {} != input channels {}", w[3], x[3])));
                }
                w[0]
            } else {
                if w[0] != 1 || w[3] != x[3] {
                    return Err(mismatch(node, format!("depthwise weight {w:?} does not match {} channels", x[3])));
                }
                x[3]
            };
            check_bias(graph, node, out_c)?;
            Ok(vec![1, oh, ow, out_c])
        }
        OpKind::FullyConnected => {
            expect_rank(node, x, 2, "input")?;
            let w = shape_of(graph, node, node.weight_input().unwrap())?;
            if w.len() != 2 || w[1] != x[1] {
                return Err(mismatch(node, format!("weight {w:?} does not match {} features", x[1])));
            }
            check_bias(graph, node, w[0])?;
            Ok(vec![1, w[0]])
        }
        OpKind::ReLU | OpKind::Softmax => Ok(x.to_vec()),
        OpKind::MaxPool2D | OpKind::AvgPool2D => {
            expect_rank(node, x, 4, "input")?;
            let [kh, kw] = node.attrs.kernel.expect("validated pool kernel");
            let (oh, ow) = window_out(node, x[1], x[2], kh, kw)?;
            Ok(vec![1, oh, ow, x[3]])
        }
        OpKind::Add => {
            let y = shape_of(graph, node, &node.inputs[1])?;
            if x != y {
                return Err(mismatch(node, format!("operands {x:?} and {y:?} differ")));
            }
            Ok(x.to_vec())
        }
        OpKind::Concat => {
            let axis = node.attrs.axis.expect("validated concat axis");
            if axis == 0 || axis >= x.len() {
                return Err(mismatch(node, format!("axis {axis} invalid for rank {}", x.len())));
            }
            let mut out = x.to_vec();
            for id in &node.inputs[1..] {
                let y = shape_of(graph, node, id)?;
                let compatible = y.len() == x.len() && (0..x.len()).all(|d| d == axis || x[d] == y[d]);
                if !compatible {
                    return Err(mismatch(node, format!("operand {y:?} incompatible with {x:?} on axis {axis}")));
                }
                out[axis] += y[axis];
            }
            Ok(out)
        }
        OpKind::Flatten => {
            if x[0] != 1 {
                return Err(mismatch(node, format!("batch must be 1, got {x:?}")));
            }
            Ok(vec![1, x[1..].iter().product()])
        }
    }
}

fn check_bias(graph: &GraphIR, node: &OpNode, channels: usize) -> Result<()> {
    if let Some(b) = node.bias_input() {
        let shape = shape_of(graph, node, b)?;
        if shape != [channels] {
            return Err(mismatch(node, format!("bias {shape:?} does not match {channels} channels")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    #[test]
    fn valid_conv_output_shape() {
        let mut b = GraphBuilder::new("g", &[1, 64, 64, 3]);
        let x = b.input_id();
        let y = b.conv2d(&x, 8, [3, 3], vec![0.0; 8 * 27], None, [1, 1], Padding::Valid);
        let g = b.finish(std::slice::from_ref(&y)).unwrap();
        assert_eq!(g.tensor(&y).unwrap().shape, vec![1, 62, 62, 8]);
    }

    #[test]
    fn pointwise_conv_keeps_spatial() {
        let mut b = GraphBuilder::new("g", &[1, 10, 10, 4]);
        let x = b.input_id();
        let y = b.conv2d(&x, 4, [1, 1], vec![0.0; 16], None, [1, 1], Padding::Valid);
        let g = b.finish(std::slice::from_ref(&y)).unwrap();
        assert_eq!(g.tensor(&y).unwrap().shape, vec![1, 10, 10, 4]);
    }

    #[test]
    fn same_padding_uses_ceil() {
        assert_eq!(spatial_out(7, 3, 2, Padding::Same), Some(4));
        assert_eq!(spatial_out(8, 3, 2, Padding::Same), Some(4));
        assert_eq!(spatial_out(2, 3, 1, Padding::Valid), None);
        // total padding 2 for 3x3 stride 1: one before, one after
        assert_eq!(same_padding(8, 3, 1), 1);
        // total padding 1 for 8 -> 4 with 3x3 stride 2: zero before, one after
        assert_eq!(same_padding(8, 3, 2), 0);
        assert_eq!(same_padding(7, 4, 1), 1);
    }

    #[test]
    fn add_with_unequal_shapes_fails() {
        let mut b = GraphBuilder::new("g", &[1, 8, 8, 8]);
        let x = b.input_id();
        let a = b.conv2d(&x, 16, [1, 1], vec![0.0; 16 * 8], None, [1, 1], Padding::Valid);
        let c = b.conv2d(&x, 32, [1, 1], vec![0.0; 32 * 8], None, [1, 1], Padding::Valid);
        let y = b.add(&a, &c);
        match b.finish(&[y]) {
            Err(Error::ShapeMismatch { node, .. }) => assert!(node.starts_with("add")),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn inference_is_idempotent() {
        let mut b = GraphBuilder::new("g", &[1, 9, 9, 2]);
        let x = b.input_id();
        let y = b.conv2d(&x, 4, [3, 3], vec![0.1; 4 * 18], Some(vec![0.0; 4]), [2, 2], Padding::Same);
        let y = b.max_pool(&y, [2, 2], [2, 2], Padding::Valid);
        let y = b.flatten(&y);
        let g = b.finish(&[y]).unwrap();
        let (once, order1) = infer_shapes(&g).unwrap();
        let (twice, order2) = infer_shapes(&once).unwrap();
        assert_eq!(once, twice);
        assert_eq!(order1, order2);
    }
}
