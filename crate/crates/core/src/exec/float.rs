use std::collections::BTreeMap;

use super::window::Window;
use super::{check_ready, softmax};
use crate::error::{Error, Result};
use crate::graph::{DType, GraphIR, OpKind, OpNode};

/// Runs the Float32 reference interpreter and returns the graph outputs in
/// declaration order.
pub fn run_f32(graph: &GraphIR, input: &[f32]) -> Result<Vec<Vec<f32>>> {
    run_f32_observed(graph, input, &mut |_, _| {})
}

/// Like [`run_f32`] but keeps every activation, keyed by tensor id.
pub fn run_f32_trace(graph: &GraphIR, input: &[f32]) -> Result<BTreeMap<String, Vec<f32>>> {
    let mut trace = BTreeMap::new();
    run_f32_observed(graph, input, &mut |id, v| {
        trace.insert(id.to_string(), v.to_vec());
    })?;
    Ok(trace)
}

/// Runs the interpreter, handing each activation (graph input included) to
/// `observe` as soon as it is computed.
pub fn run_f32_observed(
    graph: &GraphIR,
    input: &[f32],
    observe: &mut dyn FnMut(&str, &[f32]),
) -> Result<Vec<Vec<f32>>> {
    let order = check_ready(graph, input.len())?;
    for t in graph.tensors.values() {
        if t.dtype != DType::Float32 {
            return Err(Error::DTypeMismatch {
                location: t.id.clone(),
                detail: format!("Float32 interpreter got a {:?} tensor", t.dtype),
            });
        }
    }
    let mut env: BTreeMap<&str, Vec<f32>> = BTreeMap::new();
    let input_id = graph.inputs[0].as_str();
    observe(input_id, input);
    env.insert(input_id, input.to_vec());
    for i in order {
        let node = &graph.nodes[i];
        let out = eval_node(graph, node, &env);
        observe(node.output(), &out);
        env.insert(node.output(), out);
    }
    Ok(graph
        .outputs
        .iter()
        .map(|id| env.remove(id.as_str()).expect("graph output computed"))
        .collect())
}

fn constant<'a>(graph: &'a GraphIR, id: &str) -> &'a [f32] {
    graph.tensors[id]
        .data
        .as_ref()
        .and_then(|d| d.as_f32())
        .expect("validated Float32 constant")
}

fn shape<'a>(graph: &'a GraphIR, id: &str) -> &'a [usize] {
    &graph.tensors[id].shape
}

fn eval_node(graph: &GraphIR, node: &OpNode, env: &BTreeMap<&str, Vec<f32>>) -> Vec<f32> {
    let x = &env[node.data_input()];
    let xs = shape(graph, node.data_input());
    let os = shape(graph, node.output());
    match node.kind {
        OpKind::Conv2D | OpKind::DepthwiseConv2D => {
            let wid = node.weight_input().unwrap();
            let w = constant(graph, wid);
            let ws = shape(graph, wid);
            let bias = node.bias_input().map(|b| constant(graph, b));
            let win = Window::new(xs[1], xs[2], [ws[1], ws[2]], &node.attrs);
            conv(x, xs[3], w, bias, &win, os[3], node.kind == OpKind::DepthwiseConv2D)
        }
        OpKind::FullyConnected => {
            let wid = node.weight_input().unwrap();
            let w = constant(graph, wid);
            let bias = node.bias_input().map(|b| constant(graph, b));
            let (outs, ins) = (os[1], xs[1]);
            (0..outs)
                .map(|o| {
                    let row = &w[o * ins..(o + 1) * ins];
                    let acc = row.iter().zip(x).fold(0.0f32, |acc, (a, b)| acc + a * b);
                    acc + bias.map_or(0.0, |b| b[o])
                })
                .collect()
        }
        OpKind::ReLU => x.iter().map(|&v| v.max(0.0)).collect(),
        OpKind::MaxPool2D | OpKind::AvgPool2D => {
            let win = Window::new(xs[1], xs[2], node.attrs.kernel.unwrap(), &node.attrs);
            pool(x, xs[3], &win, node.kind == OpKind::MaxPool2D)
        }
        OpKind::Add => {
            let y = &env[node.inputs[1].as_str()];
            x.iter().zip(y).map(|(a, b)| a + b).collect()
        }
        OpKind::Concat => {
            let parts: Vec<(&[f32], &[usize])> = node
                .inputs
                .iter()
                .map(|id| (env[id.as_str()].as_slice(), shape(graph, id)))
                .collect();
            concat(&parts, node.attrs.axis.unwrap())
        }
        OpKind::Flatten => x.clone(),
        OpKind::Softmax => {
            let classes = *xs.last().unwrap();
            x.chunks(classes).flat_map(softmax).collect()
        }
    }
}

pub(crate) fn conv(
    x: &[f32],
    in_c: usize,
    w: &[f32],
    bias: Option<&[f32]>,
    win: &Window,
    out_c: usize,
    depthwise: bool,
) -> Vec<f32> {
    let mut out = vec![0.0f32; win.out_h * win.out_w * out_c];
    for oy in 0..win.out_h {
        for ox in 0..win.out_w {
            let base = (oy * win.out_w + ox) * out_c;
            for oc in 0..out_c {
                let mut acc = 0.0f32;
                for ky in 0..win.kh {
                    let Some(iy) = win.row(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.col(ox, kx) else { continue };
                        let px = (iy * win.in_w + ix) * in_c;
                        if depthwise {
                            acc += x[px + oc] * w[(ky * win.kw + kx) * out_c + oc];
                        } else {
                            let wk = ((oc * win.kh + ky) * win.kw + kx) * in_c;
                            for ic in 0..in_c {
                                acc += x[px + ic] * w[wk + ic];
                            }
                        }
                    }
                }
                out[base + oc] = acc + bias.map_or(0.0, |b| b[oc]);
            }
        }
    }
    out
}

fn pool(x: &[f32], c: usize, win: &Window, max: bool) -> Vec<f32> {
    let mut out = Vec::with_capacity(win.out_h * win.out_w * c);
    for oy in 0..win.out_h {
        for ox in 0..win.out_w {
            for ch in 0..c {
                let mut acc = if max { f32::NEG_INFINITY } else { 0.0 };
                let mut count = 0usize;
                for ky in 0..win.kh {
                    let Some(iy) = win.row(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.col(ox, kx) else { continue };
                        let v = x[(iy * win.in_w + ix) * c + ch];
                        acc = if max { acc.max(v) } else { acc + v };
                        count += 1;
                    }
                }
                out.push(if max { acc } else { acc / count as f32 });
            }
        }
    }
    out
}

/// Concatenates row-major tensors along `axis`.
pub(crate) fn concat<T: Copy>(parts: &[(&[T], &[usize])], axis: usize) -> Vec<T> {
    let outer: usize = parts[0].1[..axis].iter().product();
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum());
    for o in 0..outer {
        for (data, shape) in parts {
            let block: usize = shape[axis..].iter().product();
            out.extend_from_slice(&data[o * block..(o + 1) * block]);
        }
    }
    out
}
