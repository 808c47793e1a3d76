//! Integer-only interpreter for quantized graphs.
//!
//! Between the input quantization and the output dequantization every value is
//! an `i8` code or an exact integer accumulator. Accumulators are checked
//! against the 32-bit range and rescaled with [`FixedMultiplier`]s.

use std::collections::BTreeMap;

use super::float::concat;
use super::window::Window;
use super::{check_ready, softmax};
use crate::error::{Error, Result};
use crate::graph::{DType, GraphIR, OpKind, OpNode};
use crate::quant::{dequantize_tensor, quantize_tensor, FixedMultiplier, QuantParams, QMAX, QMIN};

#[derive(Debug, Clone, PartialEq)]
pub enum QValue {
    Int8(Vec<i8>),
    /// Float32 tail ops (Softmax).
    Float(Vec<f32>),
}

/// All activation values of one INT8 run, keyed by tensor id.
pub type Int8Trace = BTreeMap<String, QValue>;

/// Quantizes `input`, runs the integer pipeline and dequantizes the outputs.
pub fn run_int8(qgraph: &GraphIR, input: &[f32]) -> Result<Vec<Vec<f32>>> {
    Ok(run_int8_trace(qgraph, input, None)?.0)
}

/// Runs the INT8 interpreter, optionally executing `groups` (node-id chains)
/// as fused kernels. Fused kernels never materialize their internal tensors,
/// so those are absent from the returned trace.
pub fn run_int8_trace(
    qgraph: &GraphIR,
    input: &[f32],
    groups: Option<&[Vec<String>]>,
) -> Result<(Vec<Vec<f32>>, Int8Trace)> {
    let order = check_ready(qgraph, input.len())?;
    check_quantized(qgraph)?;
    let input_id = &qgraph.inputs[0];
    let in_t = &qgraph.tensors[input_id];
    let in_qp = qparams(qgraph, input_id)?;
    let mut env: Int8Trace = BTreeMap::new();
    env.insert(input_id.clone(), QValue::Int8(quantize_tensor(input, &in_t.shape, in_qp)));

    let fused_next = fused_successors(qgraph, groups);
    let mut skip = vec![false; qgraph.nodes.len()];
    for i in order {
        if skip[i] {
            continue;
        }
        let node = &qgraph.nodes[i];
        let out = match fused_next.get(&i) {
            Some(&relu) => {
                skip[relu] = true;
                let relu_node = &qgraph.nodes[relu];
                let out = eval_node(qgraph, node, &env, Some(relu_node))?;
                env.insert(relu_node.output().to_string(), out);
                continue;
            }
            None => eval_node(qgraph, node, &env, None)?,
        };
        env.insert(node.output().to_string(), out);
    }

    let outputs = qgraph
        .outputs
        .iter()
        .map(|id| match &env[id] {
            QValue::Float(v) => Ok(v.clone()),
            QValue::Int8(q) => {
                let t = &qgraph.tensors[id];
                Ok(dequantize_tensor(q, &t.shape, qparams(qgraph, id)?))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((outputs, env))
}

/// Maps a weighted node index to the ReLU fused behind it.
fn fused_successors(graph: &GraphIR, groups: Option<&[Vec<String>]>) -> BTreeMap<usize, usize> {
    let mut map = BTreeMap::new();
    for group in groups.unwrap_or_default() {
        if let [head, relu] = group.as_slice() {
            if let (Some(h), Some(r)) = (graph.node_index(head), graph.node_index(relu)) {
                if graph.nodes[h].kind.has_weights() && graph.nodes[r].kind == OpKind::ReLU {
                    map.insert(h, r);
                }
            }
        }
    }
    map
}

fn check_quantized(graph: &GraphIR) -> Result<()> {
    for t in graph.tensors.values() {
        let expected_ok = match t.kind {
            crate::graph::TensorKind::Bias => t.dtype == DType::Int32,
            crate::graph::TensorKind::Weight => t.dtype == DType::Int8,
            _ => t.dtype == DType::Int8 || t.dtype == DType::Float32,
        };
        if !expected_ok {
            return Err(Error::DTypeMismatch {
                location: t.id.clone(),
                detail: format!("{:?} {:?} tensor in an INT8 graph", t.dtype, t.kind),
            });
        }
        if t.dtype != DType::Float32 && t.kind != crate::graph::TensorKind::Bias && t.quant.is_none() {
            return Err(Error::MissingQuantParams(t.id.clone()));
        }
    }
    for node in &graph.nodes {
        let float_ok = node.kind == OpKind::Softmax;
        for id in node.inputs.iter().chain(&node.outputs) {
            let t = &graph.tensors[id];
            if t.dtype == DType::Float32 && !(float_ok && node.outputs.contains(id)) {
                return Err(Error::DTypeMismatch {
                    location: format!("{} ({id})", node.id),
                    detail: "Float32 tensor outside a Softmax output".into(),
                });
            }
        }
    }
    Ok(())
}

fn qparams<'a>(graph: &'a GraphIR, id: &str) -> Result<&'a QuantParams> {
    graph.tensors[id]
        .quant
        .as_ref()
        .ok_or_else(|| Error::MissingQuantParams(id.to_string()))
}

fn int8<'a>(env: &'a Int8Trace, id: &str) -> &'a [i8] {
    match &env[id] {
        QValue::Int8(v) => v,
        QValue::Float(_) => unreachable!("dtype-checked int8 operand"),
    }
}

fn requant(node: &OpNode, idx: usize) -> Result<FixedMultiplier> {
    node.requant.get(idx).copied().ok_or_else(|| {
        Error::MissingQuantParams(format!("{} requantization multiplier {idx}", node.id))
    })
}

#[inline]
fn saturate(v: i64) -> i8 {
    v.clamp(QMIN as i64, QMAX as i64) as i8
}

fn check_acc(node: &OpNode, acc: i64) -> Result<()> {
    if acc < i32::MIN as i64 || acc > i32::MAX as i64 {
        return Err(Error::AccumulatorOverflow {
            node: node.id.clone(),
            value: acc,
        });
    }
    Ok(())
}

/// Elementwise ReLU on codes: `Z_out + M * max(q - Z_in, 0)`.
struct ReluStage {
    zin: i64,
    zout: i64,
    m: FixedMultiplier,
}

impl ReluStage {
    fn new(graph: &GraphIR, node: &OpNode) -> Result<Self> {
        Ok(ReluStage {
            zin: qparams(graph, node.data_input())?.zero_point() as i64,
            zout: qparams(graph, node.output())?.zero_point() as i64,
            m: requant(node, 0)?,
        })
    }

    #[inline]
    fn apply(&self, q: i8) -> i8 {
        saturate(self.zout + self.m.apply((q as i64 - self.zin).max(0)))
    }
}

fn eval_node(graph: &GraphIR, node: &OpNode, env: &Int8Trace, fused_relu: Option<&OpNode>) -> Result<QValue> {
    let xid = node.data_input();
    let xs = &graph.tensors[xid].shape;
    let os = &graph.tensors[node.output()].shape;
    let out = match node.kind {
        OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::FullyConnected => {
            let x = int8(env, xid);
            let zin = qparams(graph, xid)?.zero_point() as i64;
            let zout = qparams(graph, node.output())?.zero_point() as i64;
            let wid = node.weight_input().unwrap();
            let w = graph.tensors[wid].data.as_ref().and_then(|d| d.as_i8()).expect("Int8 weights");
            let ws = &graph.tensors[wid].shape;
            let bias = node
                .bias_input()
                .map(|b| graph.tensors[b].data.as_ref().and_then(|d| d.as_i32()).expect("Int32 bias"));
            let out_c = *os.last().unwrap();
            let mults: Vec<FixedMultiplier> = (0..out_c).map(|c| requant(node, c)).collect::<Result<_>>()?;
            let post = fused_relu.map(|r| ReluStage::new(graph, r)).transpose()?;
            let accs = if node.kind == OpKind::FullyConnected {
                fc_acc(x, zin, w, xs[1], out_c)
            } else {
                let win = Window::new(xs[1], xs[2], [ws[1], ws[2]], &node.attrs);
                conv_acc(x, xs[3], zin, w, &win, out_c, node.kind == OpKind::DepthwiseConv2D)
            };
            let mut out = Vec::with_capacity(accs.len());
            for (i, acc) in accs.into_iter().enumerate() {
                let c = i % out_c;
                let acc = acc + bias.map_or(0, |b| b[c] as i64);
                check_acc(node, acc)?;
                let q = saturate(zout + mults[c].apply(acc));
                out.push(match &post {
                    Some(relu) => relu.apply(q),
                    None => q,
                });
            }
            out
        }
        OpKind::ReLU => {
            let stage = ReluStage::new(graph, node)?;
            int8(env, xid).iter().map(|&q| stage.apply(q)).collect()
        }
        OpKind::MaxPool2D => {
            let win = Window::new(xs[1], xs[2], node.attrs.kernel.unwrap(), &node.attrs);
            let pooled = max_pool(int8(env, xid), xs[3], &win);
            passthrough(graph, node, pooled)?
        }
        OpKind::AvgPool2D => {
            let zin = qparams(graph, xid)?.zero_point() as i64;
            let zout = qparams(graph, node.output())?.zero_point() as i64;
            let m = requant(node, 0)?;
            let win = Window::new(xs[1], xs[2], node.attrs.kernel.unwrap(), &node.attrs);
            avg_pool(int8(env, xid), xs[3], &win, zin, zout, m)
        }
        OpKind::Add => {
            let zout = qparams(graph, node.output())?.zero_point() as i64;
            let (a, b) = (int8(env, &node.inputs[0]), int8(env, &node.inputs[1]));
            let za = qparams(graph, &node.inputs[0])?.zero_point() as i64;
            let zb = qparams(graph, &node.inputs[1])?.zero_point() as i64;
            let (ma, mb) = (requant(node, 0)?, requant(node, 1)?);
            a.iter()
                .zip(b)
                .map(|(&qa, &qb)| saturate(zout + ma.apply(qa as i64 - za) + mb.apply(qb as i64 - zb)))
                .collect()
        }
        OpKind::Concat => {
            let zout = qparams(graph, node.output())?.zero_point() as i64;
            let mut rescaled = Vec::with_capacity(node.inputs.len());
            for (k, id) in node.inputs.iter().enumerate() {
                let z = qparams(graph, id)?.zero_point() as i64;
                let m = requant(node, k)?;
                rescaled.push(int8(env, id).iter().map(|&q| saturate(zout + m.apply(q as i64 - z))).collect::<Vec<i8>>());
            }
            let parts: Vec<(&[i8], &[usize])> = rescaled
                .iter()
                .zip(&node.inputs)
                .map(|(v, id)| (v.as_slice(), graph.tensors[id].shape.as_slice()))
                .collect();
            concat(&parts, node.attrs.axis.unwrap())
        }
        OpKind::Flatten => passthrough(graph, node, int8(env, xid).to_vec())?,
        OpKind::Softmax => {
            let logits = dequantize_tensor(int8(env, xid), xs, qparams(graph, xid)?);
            let classes = *xs.last().unwrap();
            return Ok(QValue::Float(logits.chunks(classes).flat_map(softmax).collect()));
        }
    };
    Ok(QValue::Int8(out))
}

/// Order-preserving ops: codes pass through when input and output share
/// parameters, otherwise they are rescaled with the node's multiplier.
fn passthrough(graph: &GraphIR, node: &OpNode, values: Vec<i8>) -> Result<Vec<i8>> {
    let qin = qparams(graph, node.data_input())?;
    let qout = qparams(graph, node.output())?;
    if qin == qout {
        return Ok(values);
    }
    let m = requant(node, 0)?;
    let (zin, zout) = (qin.zero_point() as i64, qout.zero_point() as i64);
    Ok(values.into_iter().map(|q| saturate(zout + m.apply(q as i64 - zin))).collect())
}

fn fc_acc(x: &[i8], zin: i64, w: &[i8], ins: usize, outs: usize) -> Vec<i64> {
    (0..outs)
        .map(|o| {
            w[o * ins..(o + 1) * ins]
                .iter()
                .zip(x)
                .map(|(&wv, &xv)| wv as i64 * (xv as i64 - zin))
                .sum()
        })
        .collect()
}

/// Raw accumulators `sum (q_in - Z_in) * q_w`; padded taps contribute zero.
fn conv_acc(x: &[i8], in_c: usize, zin: i64, w: &[i8], win: &Window, out_c: usize, depthwise: bool) -> Vec<i64> {
    let mut out = vec![0i64; win.out_h * win.out_w * out_c];
    for oy in 0..win.out_h {
        for ox in 0..win.out_w {
            let base = (oy * win.out_w + ox) * out_c;
            for oc in 0..out_c {
                let mut acc = 0i64;
                for ky in 0..win.kh {
                    let Some(iy) = win.row(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.col(ox, kx) else { continue };
                        let px = (iy * win.in_w + ix) * in_c;
                        if depthwise {
                            acc += (x[px + oc] as i64 - zin) * w[(ky * win.kw + kx) * out_c + oc] as i64;
                        } else {
                            let wk = ((oc * win.kh + ky) * win.kw + kx) * in_c;
                            for ic in 0..in_c {
                                acc += (x[px + ic] as i64 - zin) * w[wk + ic] as i64;
                            }
                        }
                    }
                }
                out[base + oc] = acc;
            }
        }
    }
    out
}

fn max_pool(x: &[i8], c: usize, win: &Window) -> Vec<i8> {
    let mut out = Vec::with_capacity(win.out_h * win.out_w * c);
    for oy in 0..win.out_h {
        for ox in 0..win.out_w {
            for ch in 0..c {
                let mut m = i8::MIN;
                for ky in 0..win.kh {
                    let Some(iy) = win.row(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.col(ox, kx) else { continue };
                        m = m.max(x[(iy * win.in_w + ix) * c + ch]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

fn avg_pool(x: &[i8], c: usize, win: &Window, zin: i64, zout: i64, m: FixedMultiplier) -> Vec<i8> {
    let mut out = Vec::with_capacity(win.out_h * win.out_w * c);
    for oy in 0..win.out_h {
        for ox in 0..win.out_w {
            for ch in 0..c {
                let (mut sum, mut count) = (0i64, 0i64);
                for ky in 0..win.kh {
                    let Some(iy) = win.row(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.col(ox, kx) else { continue };
                        sum += x[(iy * win.in_w + ix) * c + ch] as i64 - zin;
                        count += 1;
                    }
                }
                out.push(saturate(zout + m.apply_div(sum, count)));
            }
        }
    }
    out
}
