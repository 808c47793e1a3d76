use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_f32, run_int8, Dataset};
use crate::error::{Error, Result};
use crate::graph::GraphIR;

/// One classified sample; the unit of downlink simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub sample_id: String,
    pub predicted_class: usize,
    /// Maximum softmax probability.
    pub confidence: f64,
    pub true_label: usize,
    pub correct: bool,
}

impl InferenceRecord {
    pub fn new(sample_id: impl Into<String>, predicted_class: usize, confidence: f64, true_label: usize) -> Self {
        InferenceRecord {
            sample_id: sample_id.into(),
            predicted_class,
            confidence,
            true_label,
            correct: predicted_class == true_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<InferenceRecord>,
    pub accuracy: f64,
}

impl Evaluation {
    pub fn from_records(records: Vec<InferenceRecord>) -> Self {
        let correct = records.iter().filter(|r| r.correct).count();
        let accuracy = if records.is_empty() {
            0.0
        } else {
            correct as f64 / records.len() as f64
        };
        Evaluation { records, accuracy }
    }
}

/// Classifies every sample with the interpreter matching the graph's dtype.
/// The graph must end in a Softmax; samples run in parallel but results keep
/// dataset order.
pub fn evaluate(graph: &GraphIR, dataset: &Dataset) -> Result<Evaluation> {
    let out_id = graph.outputs.first().ok_or_else(|| Error::ShapeMismatch {
        node: graph.name.clone(),
        detail: "graph has no outputs".into(),
    })?;
    let ends_in_softmax = graph
        .nodes
        .iter()
        .any(|n| n.kind == crate::graph::OpKind::Softmax && n.output() == out_id);
    if !ends_in_softmax {
        return Err(Error::ShapeMismatch {
            node: out_id.clone(),
            detail: "evaluation needs a Softmax output".into(),
        });
    }
    let classes = graph.tensors[out_id].shape.last().copied().unwrap_or(0);
    if let Some(s) = dataset.samples.iter().find(|s| s.label >= classes) {
        return Err(Error::LabelOutOfRange {
            sample: s.id.clone(),
            label: s.label,
            classes,
        });
    }
    let quantized = graph.is_quantized();
    let records = dataset
        .samples
        .par_iter()
        .map(|s| {
            let probs = if quantized {
                run_int8(graph, &s.input)?
            } else {
                run_f32(graph, &s.input)?
            }
            .swap_remove(0);
            let (pred, conf) = argmax(&probs);
            Ok(InferenceRecord::new(s.id.clone(), pred, conf as f64, s.label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_records(records))
}

/// First index of the maximum.
fn argmax(p: &[f32]) -> (usize, f32) {
    p.iter()
        .copied()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
}

pub fn write_records_csv(records: &[InferenceRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<InferenceRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r.deserialize().collect::<std::result::Result<Vec<InferenceRecord>, _>>()?;
    for rec in &records {
        if !(0.0..=1.0).contains(&rec.confidence) || rec.correct != (rec.predicted_class == rec.true_label) {
            return Err(Error::Dataset {
                path: path.to_path_buf(),
                detail: format!("inconsistent record {}", rec.sample_id),
            });
        }
    }
    Ok(records)
}

pub fn write_records_json(records: &[InferenceRecord], path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(records).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sample;
    use crate::graph::GraphBuilder;

    fn classifier(weights: Vec<f32>, classes: usize) -> GraphIR {
        let mut b = GraphBuilder::new("clf", &[1, 2]);
        let x = b.input_id();
        let y = b.fully_connected(&x, classes, weights, None);
        let y = b.softmax(&y);
        b.finish(&[y]).unwrap()
    }

    fn ds(items: &[([f32; 2], usize)]) -> Dataset {
        Dataset {
            samples: items
                .iter()
                .enumerate()
                .map(|(i, (x, l))| Sample { id: format!("s{i}"), input: x.to_vec(), label: *l })
                .collect(),
        }
    }

    #[test]
    fn uniform_logits_give_uniform_confidence() {
        let g = classifier(vec![0.0; 20], 10);
        let e = evaluate(&g, &ds(&[([1.0, 2.0], 3), ([-4.0, 0.5], 0)])).unwrap();
        for r in &e.records {
            assert!((r.confidence - 0.1).abs() < 1e-6);
            assert_eq!(r.predicted_class, 0);
        }
    }

    #[test]
    fn accuracy_counts() {
        // class 0 iff x0 > x1
        let g = classifier(vec![1.0, -1.0, -1.0, 1.0], 2);
        let perfect = evaluate(&g, &ds(&[([1.0, 0.0], 0), ([0.0, 1.0], 1)])).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        let partial = evaluate(&g, &ds(&[([1.0, 0.0], 0), ([0.0, 1.0], 1), ([2.0, 0.0], 1)])).unwrap();
        assert!((partial.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!(!partial.records[2].correct);
    }

    #[test]
    fn label_out_of_range() {
        let g = classifier(vec![0.0; 4], 2);
        assert!(matches!(evaluate(&g, &ds(&[([0.0, 0.0], 2)])), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn records_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs = vec![InferenceRecord::new("a", 1, 0.875, 1), InferenceRecord::new("b", 0, 0.25, 3)];
        write_records_csv(&recs, &path).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), recs);
    }
}
