//! Bundled desk-scale assets: a seeded Gaussian-blob image dataset and two
//! small classifiers (a plain ConvNet and a depthwise-separable net).
//!
//! The convolutional layers are He-initialized and left untrained; only the
//! final FullyConnected readout is fitted, by softmax regression on the
//! flattened features of a separate training split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::exec::{run_f32, softmax, Dataset, Sample};
use crate::graph::{GraphBuilder, GraphIR, Padding};

pub const IMAGE_SIZE: usize = 32;
pub const CHANNELS: usize = 3;
pub const CLASSES: usize = 8;
pub const INPUT_SHAPE: [usize; 4] = [1, IMAGE_SIZE, IMAGE_SIZE, CHANNELS];

const CENTERS: [(f64, f64); 4] = [(9.0, 9.0), (9.0, 23.0), (23.0, 9.0), (23.0, 23.0)];
const COLORS: [[f64; 3]; 2] = [[1.0, 0.35, 0.1], [0.1, 0.45, 1.0]];

/// `n` images whose class sets the blob's quadrant (class / 2) and color
/// (class % 2). Labels cycle through the classes.
pub fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.12).unwrap();
    let jitter = Normal::new(0.0, 2.0).unwrap();
    let samples = (0..n)
        .map(|i| {
            let label = i % CLASSES;
            let (cy, cx) = CENTERS[label / 2];
            let (cy, cx) = (cy + jitter.sample(&mut rng), cx + jitter.sample(&mut rng));
            let sigma: f64 = rng.random_range(3.0..5.0);
            let amp: f64 = rng.random_range(0.7..1.3);
            let color = COLORS[label % 2];
            let mut input = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * CHANNELS);
            for y in 0..IMAGE_SIZE {
                for x in 0..IMAGE_SIZE {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let blob = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    for c in color {
                        input.push((blob * c + noise.sample(&mut rng)) as f32);
                    }
                }
            }
            Sample {
                id: format!("s{i:04}"),
                input,
                label,
            }
        })
        .collect();
    Dataset { samples }
}

struct Init(ChaCha8Rng);

impl Init {
    fn he(&mut self, n: usize, fan_in: usize) -> Vec<f32> {
        let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        (0..n).map(|_| d.sample(&mut self.0) as f32).collect()
    }

    /// He init with a log-uniform gain in [0.1, 1] per output filter, so filter
    /// norms spread out the way they do in trained networks.
    fn he_filters(&mut self, filters: usize, fan_in: usize) -> Vec<f32> {
        let mut w = self.he(filters * fan_in, fan_in);
        for row in w.chunks_mut(fan_in) {
            let gain = self.0.random_range(0.1f64.ln()..0.0).exp() as f32;
            row.iter_mut().for_each(|v| *v *= gain);
        }
        w
    }
}

type Readout = (Vec<f32>, Vec<f32>);

fn conv(b: &mut GraphBuilder, init: &mut Init, x: &str, cin: usize, cout: usize, k: usize, stride: usize) -> String {
    let w = init.he_filters(cout, k * k * cin);
    let y = b.conv2d(x, cout, [k, k], w, Some(vec![0.0; cout]), [stride, stride], Padding::Same);
    b.relu(&y)
}

fn dw(b: &mut GraphBuilder, init: &mut Init, x: &str, c: usize, stride: usize) -> String {
    let w = init.he(9 * c, 9);
    let y = b.depthwise_conv2d(x, [3, 3], w, Some(vec![0.0; c]), [stride, stride], Padding::Same);
    b.relu(&y)
}

fn finish(mut b: GraphBuilder, features: String, dims: usize, readout: Option<Readout>) -> Result<GraphIR> {
    match readout {
        None => b.finish(&[features]),
        Some((w, bias)) => {
            debug_assert_eq!(w.len(), dims * CLASSES);
            let y = b.fully_connected(&features, CLASSES, w, Some(bias));
            let y = b.softmax(&y);
            b.finish(&[y])
        }
    }
}

/// conv16 - pool - conv32 - pool - conv40 - pool - flatten - fc8 - softmax
fn convnet(seed: u64, readout: Option<Readout>) -> Result<(GraphIR, usize)> {
    let mut init = Init(ChaCha8Rng::seed_from_u64(seed));
    let mut b = GraphBuilder::new("convnet", &INPUT_SHAPE);
    let mut y = b.input_id();
    let mut cin = CHANNELS;
    for cout in [16, 32, 40] {
        y = conv(&mut b, &mut init, &y, cin, cout, 3, 1);
        y = b.max_pool(&y, [2, 2], [2, 2], Padding::Valid);
        cin = cout;
    }
    let y = b.flatten(&y);
    let dims = 4 * 4 * 40;
    Ok((finish(b, y, dims, readout)?, dims))
}

/// Depthwise-separable stack ending in 2x2 average pooling.
fn dwsep(seed: u64, readout: Option<Readout>) -> Result<(GraphIR, usize)> {
    let mut init = Init(ChaCha8Rng::seed_from_u64(seed));
    let mut b = GraphBuilder::new("dwsep", &INPUT_SHAPE);
    let x = b.input_id();
    let mut y = conv(&mut b, &mut init, &x, CHANNELS, 32, 3, 2);
    let mut c = 32;
    for (stride, cout) in [(1, 64), (2, 128), (2, 128)] {
        y = dw(&mut b, &mut init, &y, c, stride);
        y = conv(&mut b, &mut init, &y, c, cout, 1, 1);
        c = cout;
    }
    let y = b.avg_pool(&y, [2, 2], [2, 2], Padding::Valid);
    let y = b.flatten(&y);
    let dims = 2 * 2 * c;
    Ok((finish(b, y, dims, readout)?, dims))
}

/// Softmax regression by full-batch gradient descent.
fn fit_readout(features: &[Vec<f32>], labels: &[usize], dims: usize) -> Readout {
    let n = features.len() as f64;
    let mean_sq = features.iter().map(|f| f.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sum::<f64>() / n;
    let lr = 2.0 / (mean_sq + 1.0);
    let mut w = vec![0.0f64; CLASSES * dims];
    let mut bias = vec![0.0f64; CLASSES];
    for _ in 0..300 {
        let mut gw = vec![0.0f64; CLASSES * dims];
        let mut gb = vec![0.0f64; CLASSES];
        for (f, &label) in features.iter().zip(labels) {
            let logits: Vec<f32> = (0..CLASSES)
                .map(|k| (bias[k] + w[k * dims..(k + 1) * dims].iter().zip(f).map(|(a, &b)| a * b as f64).sum::<f64>()) as f32)
                .collect();
            let p = softmax(&logits);
            for k in 0..CLASSES {
                let err = p[k] as f64 - if k == label { 1.0 } else { 0.0 };
                gb[k] += err;
                for (g, &v) in gw[k * dims..(k + 1) * dims].iter_mut().zip(f) {
                    *g += err * v as f64;
                }
            }
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= lr * (gi / n + 1e-3 * *wi);
        }
        for (bi, gi) in bias.iter_mut().zip(&gb) {
            *bi -= lr * gi / n;
        }
    }
    let t = temperature(features, &w, &bias, dims);
    (w.iter().map(|&v| (v * t) as f32).collect(), bias.iter().map(|&v| (v * t) as f32).collect())
}

/// Logit scale at which `LOW_CONFIDENCE_SHARE` of the training samples have a
/// top probability below `CONFIDENCE_POINT`. Predictions are unchanged.
fn temperature(features: &[Vec<f32>], w: &[f64], bias: &[f64], dims: usize) -> f64 {
    const CONFIDENCE_POINT: f64 = 0.95;
    const LOW_CONFIDENCE_SHARE: f64 = 0.15;
    let logits: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            (0..CLASSES)
                .map(|k| bias[k] + w[k * dims..(k + 1) * dims].iter().zip(f).map(|(a, &b)| a * b as f64).sum::<f64>())
                .collect()
        })
        .collect();
    let quantile = |t: f64| {
        let mut conf: Vec<f64> = logits
            .iter()
            .map(|l| {
                let m = l.iter().cloned().fold(f64::MIN, f64::max);
                1.0 / l.iter().map(|v| ((v - m) * t).exp()).sum::<f64>()
            })
            .collect();
        conf.sort_by(f64::total_cmp);
        conf[(LOW_CONFIDENCE_SHARE * conf.len() as f64) as usize]
    };
    // top probability grows with the scale, so bisect on it
    let (mut lo, mut hi) = (1e-3f64, 1e3f64);
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if quantile(mid) < CONFIDENCE_POINT {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn trained(build: fn(u64, Option<Readout>) -> Result<(GraphIR, usize)>, seed: u64) -> Result<GraphIR> {
    let (body, dims) = build(seed, None)?;
    let train = synthetic_dataset(400, seed ^ 0x5eed);
    let features = train
        .samples
        .iter()
        .map(|s| run_f32(&body, &s.input).map(|mut o| o.swap_remove(0)))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = train.samples.iter().map(|s| s.label).collect();
    let readout = fit_readout(&features, &labels, dims);
    Ok(build(seed, Some(readout))?.0)
}

pub fn bundled_convnet(seed: u64) -> Result<GraphIR> {
    trained(convnet, seed)
}

pub fn bundled_dwsep(seed: u64) -> Result<GraphIR> {
    trained(dwsep, seed)
}
