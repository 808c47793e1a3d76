//! Post-training static INT8 quantization.
//!
//! Real values map to codes through `r = S * (q - Z)` with `q` in `[-128, 127]`.
//! Weights are quantized per output channel and symmetrically, activations per
//! tensor and asymmetrically over a calibration range widened to contain zero.

mod fixed;
mod lower;

use serde::{Deserialize, Serialize};

use crate::exec::TensorRange;

pub use fixed::FixedMultiplier;
pub use lower::{flash_breakdown, quantize_graph, FlashBreakdown, CHANNEL_TABLE_BYTES, TENSOR_QPARAM_BYTES};

pub const QMIN: i32 = -128;
pub const QMAX: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerTensor,
    /// One scale/zero-point per index along `axis`.
    PerChannel(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    Asymmetric,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: Vec<f64>,
    pub zero_point: Vec<i32>,
    pub granularity: Granularity,
    pub symmetric: bool,
}

impl QuantParams {
    pub fn per_tensor(scale: f64, zero_point: i32) -> Self {
        QuantParams {
            scale: vec![scale],
            zero_point: vec![zero_point],
            granularity: Granularity::PerTensor,
            symmetric: zero_point == 0,
        }
    }

    /// Symmetric per-channel parameters along `axis` (zero points all 0).
    pub fn per_channel(scales: Vec<f64>, axis: usize) -> Self {
        let n = scales.len();
        QuantParams {
            scale: scales,
            zero_point: vec![0; n],
            granularity: Granularity::PerChannel(axis),
            symmetric: true,
        }
    }

    /// Scale of a per-tensor parameter set (the first channel otherwise).
    pub fn scale(&self) -> f64 {
        self.scale[0]
    }

    pub fn zero_point(&self) -> i32 {
        self.zero_point[0]
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Checks S > 0, Z in range, symmetric implies Z = 0, and consistent lengths.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.scale.is_empty() || self.scale.len() != self.zero_point.len() {
            return Err(format!(
                "{} scales for {} zero points",
                self.scale.len(),
                self.zero_point.len()
            ));
        }
        if self.granularity == Granularity::PerTensor && self.scale.len() != 1 {
            return Err("per-tensor parameters must hold exactly one scale".into());
        }
        if let Some(s) = self.scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(format!("scale {s} is not a positive finite number"));
        }
        if let Some(z) = self.zero_point.iter().find(|z| !(QMIN..=QMAX).contains(*z)) {
            return Err(format!("zero point {z} outside [-128, 127]"));
        }
        if self.symmetric && self.zero_point.iter().any(|&z| z != 0) {
            return Err("symmetric parameters need zero point 0".into());
        }
        Ok(())
    }
}

/// Rounds half away from zero (`f64::round` semantics), the single rounding
/// rule used throughout quantization.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Derives scale and zero point from an observed range.
///
/// Asymmetric: the range is widened to contain 0, `S = (max - min) / 255` and
/// `Z = round(-128 - min / S)`. Symmetric: `S = max(|min|, |max|) / 127`, `Z = 0`.
/// A zero-width range yields `S = 1, Z = 0`.
pub fn compute_qparams(range: &TensorRange, mode: QuantMode) -> QuantParams {
    match mode {
        QuantMode::Asymmetric => {
            let lo = range.min.min(0.0);
            let hi = range.max.max(0.0);
            if hi <= lo {
                return QuantParams::per_tensor(1.0, 0);
            }
            let scale = (hi - lo) / 255.0;
            let zp = round_half_away(QMIN as f64 - lo / scale).clamp(QMIN as f64, QMAX as f64) as i32;
            QuantParams {
                scale: vec![scale],
                zero_point: vec![zp],
                granularity: Granularity::PerTensor,
                symmetric: false,
            }
        }
        QuantMode::Symmetric => {
            let m = range.min.abs().max(range.max.abs());
            let scale = if m > 0.0 { m / QMAX as f64 } else { 1.0 };
            QuantParams {
                scale: vec![scale],
                zero_point: vec![0],
                granularity: Granularity::PerTensor,
                symmetric: true,
            }
        }
    }
}

/// `q = clamp(round(r / S) + Z, -128, 127)`.
pub fn quantize_value(r: f64, scale: f64, zero_point: i32) -> i8 {
    let q = round_half_away(r / scale) + zero_point as f64;
    q.clamp(QMIN as f64, QMAX as f64) as i8
}

/// `r = S * (q - Z)`.
pub fn dequantize_value(q: i8, scale: f64, zero_point: i32) -> f64 {
    scale * (q as i32 - zero_point) as f64
}

/// Index of the channel that flat element `i` of a tensor with `shape` belongs to.
fn channel_of(i: usize, shape: &[usize], axis: usize) -> usize {
    let inner: usize = shape[axis + 1..].iter().product();
    (i / inner) % shape[axis]
}

fn params_for(i: usize, shape: &[usize], qp: &QuantParams) -> (f64, i32) {
    match qp.granularity {
        Granularity::PerTensor => (qp.scale[0], qp.zero_point[0]),
        Granularity::PerChannel(axis) => {
            let c = channel_of(i, shape, axis);
            (qp.scale[c], qp.zero_point[c])
        }
    }
}

/// Quantizes a tensor laid out with `shape` (the shape only matters for
/// per-channel parameters).
pub fn quantize_tensor(values: &[f32], shape: &[usize], qp: &QuantParams) -> Vec<i8> {
    values
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let (s, z) = params_for(i, shape, qp);
            quantize_value(r as f64, s, z)
        })
        .collect()
}

pub fn dequantize_tensor(q: &[i8], shape: &[usize], qp: &QuantParams) -> Vec<f32> {
    q.iter()
        .enumerate()
        .map(|(i, &v)| {
            let (s, z) = params_for(i, shape, qp);
            dequantize_value(v, s, z) as f32
        })
        .collect()
}

/// Per-channel symmetric parameters for a weight tensor along `axis`.
pub fn per_channel_symmetric(values: &[f32], shape: &[usize], axis: usize) -> QuantParams {
    let mut max_abs = vec![0.0f64; shape[axis]];
    for (i, &v) in values.iter().enumerate() {
        let c = channel_of(i, shape, axis);
        max_abs[c] = max_abs[c].max((v as f64).abs());
    }
    let scales = max_abs
        .into_iter()
        .map(|m| if m > 0.0 { m / QMAX as f64 } else { 1.0 })
        .collect();
    QuantParams::per_channel(scales, axis)
}
