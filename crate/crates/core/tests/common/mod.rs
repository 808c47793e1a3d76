//! Brute-force oracles and shared fixtures for the integration tests.
//!
//! The oracles are deliberately naive and share no code with the library
//! algorithms they check.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tinysat_core::exec::{load_dataset, Dataset, InferenceRecord};
use tinysat_core::graph::{load_model, GraphIR};
use tinysat_core::mapper::{HardwareProfile, Lifetime, Target, Task};
use tinysat_core::pipeline::calibrate_subset;
use tinysat_core::prune::{build_prune_plan, materialize, DEFAULT_SCHEDULE};
use tinysat_core::quant::quantize_graph;

pub fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

pub fn bundled_model(name: &str) -> GraphIR {
    load_model(&assets().join(format!("models/{name}.json"))).unwrap()
}

pub fn bundled_dataset() -> Dataset {
    load_dataset(&assets().join("data/synthetic"), None).unwrap()
}

pub fn profile(name: &str) -> HardwareProfile {
    HardwareProfile::load(&assets().join(format!("profiles/{name}.json"))).unwrap()
}

/// Post-training quantization the way the pipeline does it (64 samples, seed 7).
pub fn quantize(graph: &GraphIR, dataset: &Dataset) -> GraphIR {
    let (ranges, _) = calibrate_subset(graph, dataset, 64, 7).unwrap();
    quantize_graph(graph, &ranges).unwrap()
}

/// Default three-stage pruning followed by slicing.
pub fn prune(graph: &GraphIR) -> GraphIR {
    let plan = build_prune_plan(graph, &DEFAULT_SCHEDULE).unwrap();
    materialize(graph, &plan).unwrap()
}

/// Every permutation of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Optimal makespan by trying every permutation that respects the
/// dependencies and starting each task as early as possible in that order.
/// Any optimal schedule, sorted by start time, is one of these orders.
pub fn optimal_makespan(tasks: &[Task], transfer_us: f64) -> f64 {
    let mut best = f64::INFINITY;
    'perm: for perm in permutations(tasks.len()) {
        let mut pos = vec![0; tasks.len()];
        for (k, &t) in perm.iter().enumerate() {
            pos[t] = k;
        }
        for (t, task) in tasks.iter().enumerate() {
            if task.preds.iter().any(|&p| pos[p] > pos[t]) {
                continue 'perm;
            }
        }
        let mut end = vec![0.0f64; tasks.len()];
        let (mut npu_free, mut cpu_free) = (0.0f64, 0.0f64);
        for &t in &perm {
            let task = &tasks[t];
            let mut start = if task.target == Target::Npu { npu_free } else { cpu_free };
            for &p in &task.preds {
                let hop = if tasks[p].target == task.target { 0.0 } else { transfer_us };
                start = start.max(end[p] + hop);
            }
            end[t] = start + task.latency_us;
            match task.target {
                Target::Npu => npu_free = end[t],
                Target::Cpu => cpu_free = end[t],
            }
        }
        best = best.min(end.iter().cloned().fold(0.0, f64::max));
    }
    best
}

/// Random DAG over `n` tasks; edges only go from lower to higher index.
/// Latencies are whole microseconds so makespans compare exactly.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize, edge_p: f64) -> Vec<Task> {
    (0..n)
        .map(|t| Task {
            target: if rng.random_bool(0.5) { Target::Npu } else { Target::Cpu },
            latency_us: rng.random_range(1..=20) as f64,
            preds: (0..t).filter(|_| rng.random_bool(edge_p)).collect(),
        })
        .collect()
}

/// Smallest arena over all placement orders, each tensor going to the lowest
/// offset that clears the conflicting tensors already placed. Sorting an
/// optimal layout by offset gives an order this reproduces or beats.
pub fn optimal_arena(lifetimes: &[Lifetime]) -> u64 {
    let n = lifetimes.len();
    let conflict: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let (a, b) = (&lifetimes[i], &lifetimes[j]);
                    let steps = a.first_step.max(b.first_step) <= a.last_step.min(b.last_step);
                    let time = a.start_us.max(b.start_us) < a.end_us.min(b.end_us);
                    i != j && (steps || time)
                })
                .collect()
        })
        .collect();
    let mut best = u64::MAX;
    for perm in permutations(n) {
        let mut placed: Vec<(usize, u64)> = Vec::new();
        let mut top = 0;
        for &i in &perm {
            let size = lifetimes[i].size;
            let clashes = |o: u64| {
                placed
                    .iter()
                    .any(|&(j, oj)| conflict[i][j] && o < oj + lifetimes[j].size && oj < o + size)
            };
            let mut candidates: Vec<u64> = placed.iter().map(|&(j, oj)| oj + lifetimes[j].size).collect();
            candidates.push(0);
            candidates.sort_unstable();
            let offset = candidates.into_iter().find(|&o| !clashes(o)).unwrap();
            top = top.max(offset + size);
            placed.push((i, offset));
        }
        best = best.min(top);
    }
    best
}

/// Random tensor lifetimes over a short timeline.
pub fn random_lifetimes(rng: &mut ChaCha8Rng, n: usize) -> Vec<Lifetime> {
    (0..n)
        .map(|i| {
            let first_step = rng.random_range(0..6);
            let last_step = first_step + rng.random_range(0..3);
            let start_us = rng.random_range(0..40) as f64;
            Lifetime {
                tensor: format!("t{i}"),
                size: rng.random_range(1..=64) * 16,
                first_step,
                last_step,
                start_us,
                end_us: start_us + rng.random_range(1..20) as f64,
            }
        })
        .collect()
}

/// Record set with confidences on a coarse grid, so thresholds hit exact ties.
pub fn random_records(rng: &mut ChaCha8Rng, n: usize, p_correct: f64) -> Vec<InferenceRecord> {
    let mut records: Vec<InferenceRecord> = (0..n)
        .map(|i| {
            let label = rng.random_range(0..8);
            let predicted = if rng.random_bool(p_correct) { label } else { (label + 1) % 8 };
            let confidence = rng.random_range(1..=20) as f64 / 20.0;
            InferenceRecord::new(format!("s{i:04}"), predicted, confidence, label)
        })
        .collect();
    records.shuffle(rng);
    records
}

/// Hybrid accuracy recomputed sample by sample: below-threshold samples take
/// the ground model's verdict, the rest keep the onboard one.
pub fn hybrid_oracle(onboard: &[InferenceRecord], ground: &[InferenceRecord], threshold: f64) -> f64 {
    let mut correct = 0;
    for r in onboard {
        let ok = if r.confidence < threshold {
            ground.iter().find(|g| g.sample_id == r.sample_id).unwrap().correct
        } else {
            r.correct
        };
        if ok {
            correct += 1;
        }
    }
    correct as f64 / onboard.len() as f64
}

/// Relative path to file bytes for every file below `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
