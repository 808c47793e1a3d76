//! End-to-end flow: baseline evaluation, staged pruning with checkpoint
//! round-trips, calibration, quantization, mapping, cost estimation and
//! downlink simulation, all driven by one JSON config.
//!
//! Outputs are written to a staging directory next to `output_dir` and moved
//! into place only when every stage succeeds.

mod assets;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{write_cost_csv, BudgetFlags, CostRow};
use crate::downlink::{simulate, DownlinkReport, DownlinkScenario, LinkBudget};
use crate::error::{Error, Result};
use crate::exec::{calibrate, evaluate, load_dataset, save_ranges, write_records_csv, Dataset, Evaluation, RangeMap};
use crate::graph::{load_model, save_model, validate, GraphIR};
use crate::mapper::{plan_cpu_reference, plan_deployment, DeploymentPlan, HardwareProfile};
use crate::prune::{
    apply_masks, export_checkpoint, import_checkpoint, load_checkpoint, materialize, save_checkpoint, PrunePlan,
    DEFAULT_SCHEDULE,
};
use crate::quant::{flash_breakdown, quantize_graph};

pub use assets::{bundled_convnet, bundled_dwsep, synthetic_dataset, CLASSES, INPUT_SHAPE};

fn default_schedule() -> Vec<f64> {
    DEFAULT_SCHEDULE.to_vec()
}

fn default_calibration_size() -> usize {
    64
}

fn default_threshold() -> f64 {
    0.95
}

fn default_ground_model() -> Option<String> {
    Some(BASELINE.to_string())
}

/// `ground_model` value selecting the unpruned Float32 model.
pub const BASELINE: &str = "baseline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    #[serde(default = "default_schedule")]
    pub schedule: Vec<f64>,
    #[serde(default)]
    pub skip: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            schedule: default_schedule(),
            skip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    #[serde(default = "default_calibration_size")]
    pub calibration_size: usize,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub profile: PathBuf,
    pub link: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// `"baseline"`, a model path, or null to skip hybrid accuracy.
    #[serde(default = "default_ground_model")]
    pub ground_model: Option<String>,
    /// Raw capture size; defaults to one byte per input element.
    #[serde(default)]
    pub bytes_per_sample: Option<f64>,
}

impl PipelineConfig {
    /// Parses a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve(base);
        config.check().map_err(|e| match e {
            Error::Config { field, detail } => Error::config(format!("{}: {field}", path.display()), detail),
            other => other,
        })?;
        Ok(config)
    }

    pub fn resolve(&mut self, base: &Path) {
        for p in [&mut self.model, &mut self.dataset, &mut self.profile, &mut self.link, &mut self.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(g) = self.ground_model.as_mut().filter(|g| *g != BASELINE && Path::new(g.as_str()).is_relative()) {
            *g = base.join(&*g).to_string_lossy().into_owned();
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.calibration_size == 0 {
            return Err(Error::config("calibration_size", "must be > 0"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::config("threshold", format!("{} outside (0, 1]", self.threshold)));
        }
        if let Some(b) = self.bytes_per_sample.filter(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::config("bytes_per_sample", format!("must be > 0, got {b}")));
        }
        if !self.prune.skip && self.prune.schedule.is_empty() {
            return Err(Error::config("prune.schedule", "empty; set prune.skip to disable pruning"));
        }
        if self.output_dir.file_name().is_none() {
            return Err(Error::config("output_dir", "must name a directory"));
        }
        Ok(())
    }
}

/// Indices of the calibration subset: `size` distinct samples chosen with
/// `seed`, in dataset order. The whole set when it is not larger than `size`.
pub fn select_calibration(dataset_len: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= dataset_len {
        return (0..dataset_len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, dataset_len, size).into_vec();
    picked.sort_unstable();
    picked
}

pub fn calibrate_subset(graph: &GraphIR, dataset: &Dataset, size: usize, seed: u64) -> Result<(RangeMap, Vec<String>)> {
    let idx = select_calibration(dataset.len(), size, seed);
    let inputs: Vec<&[f32]> = idx.iter().map(|&i| dataset.samples[i].input.as_slice()).collect();
    let ids = idx.iter().map(|&i| dataset.samples[i].id.clone()).collect();
    Ok((calibrate(graph, &inputs)?, ids))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub accuracy: f64,
    pub params: usize,
    pub flash_bytes: u64,
    pub ram_peak_bytes: u64,
    pub latency_ms: f64,
    pub energy_mj: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub original: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSummary {
    pub schedule: Vec<f64>,
    pub layers: BTreeMap<String, LayerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub model: String,
    pub dataset: String,
    pub samples: usize,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub pruning: Option<PruneSummary>,
    pub calibration_samples: Vec<String>,
    /// Share of samples where the INT8 and Float32 (pre-quantization) models agree on top-1.
    pub int8_float_agreement: f64,
    /// Quantized flash relative to the unpruned Float32 model.
    pub flash_reduction_pct: f64,
    pub budget_flags: BudgetFlags,
    pub downlink: DownlinkReport,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn agreement(a: &Evaluation, b: &Evaluation) -> f64 {
    let same = a
        .records
        .iter()
        .zip(&b.records)
        .filter(|(x, y)| x.predicted_class == y.predicted_class)
        .count();
    same as f64 / a.records.len().max(1) as f64
}

fn stage_row(stage: &str, eval: &Evaluation, graph: &GraphIR, plan: &DeploymentPlan) -> StageReport {
    let e = &plan.estimates;
    StageReport {
        stage: stage.into(),
        accuracy: eval.accuracy,
        params: graph.param_count(),
        flash_bytes: e.flash_bytes,
        ram_peak_bytes: e.ram_peak_bytes,
        latency_ms: e.latency_ms,
        energy_mj: e.energy_mj,
    }
}

fn staging_dir(output_dir: &Path) -> PathBuf {
    let name = output_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    output_dir.with_file_name(format!(".{name}.partial"))
}

/// Runs every stage and moves the finished tree to `config.output_dir`,
/// replacing any previous run. On failure nothing is left behind.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.check()?;
    let staging = staging_dir(&config.output_dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    mkdir(&staging)?;
    match run_stages(config, &staging) {
        Ok(report) => {
            if config.output_dir.exists() {
                fs::remove_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
            }
            fs::rename(&staging, &config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
            Ok(report)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn run_stages(config: &PipelineConfig, out: &Path) -> Result<PipelineReport> {
    for dir in ["models", "records", "calibration", "plan", "cost", "downlink"] {
        mkdir(&out.join(dir))?;
    }

    let stage = "load";
    let (graph, dataset, profile, link) = (|| {
        let graph = load_model(&config.model)?;
        let input_len = graph.tensors[&graph.inputs[0]].num_elements();
        let dataset = load_dataset(&config.dataset, Some(input_len))?;
        if dataset.is_empty() {
            return Err(Error::Dataset {
                path: config.dataset.clone(),
                detail: "no samples".into(),
            });
        }
        Ok((graph, dataset, HardwareProfile::load(&config.profile)?, LinkBudget::load(&config.link)?))
    })()
    .map_err(|e| e.in_stage(stage))?;

    let stage = "baseline";
    let (float_eval, float_plan) = (|| {
        save_model(&graph, &out.join("models/float.json"))?;
        let eval = evaluate(&graph, &dataset)?;
        write_records_csv(&eval.records, &out.join("records/float.csv"))?;
        Ok((eval, plan_cpu_reference(&graph, &profile)?))
    })()
    .map_err(|e: Error| e.in_stage(stage))?;
    let mut stages = vec![stage_row("float", &float_eval, &graph, &float_plan)];

    let (deployed, deployed_eval, pruning) = if config.prune.skip {
        (graph.clone(), float_eval.clone(), None)
    } else {
        let stage = "prune";
        (|| {
            let dir = out.join("prune");
            mkdir(&dir)?;
            let mut plan = PrunePlan::new(&graph, &config.prune.schedule)?;
            let mut current = graph.clone();
            while !plan.is_complete() {
                let k = plan.stages.len() + 1;
                plan.next_stage(&current)?;
                let masked = apply_masks(&current, &plan)?;
                let path = dir.join(format!("stage{k}.ckpt.json"));
                save_checkpoint(&export_checkpoint(&masked), &path)?;
                current = import_checkpoint(&masked, &load_checkpoint(&path)?)?;
            }
            plan.save(&dir.join("plan.json"))?;
            let pruned = materialize(&current, &plan)?;
            save_model(&pruned, &out.join("models/pruned.json"))?;
            let eval = evaluate(&pruned, &dataset)?;
            write_records_csv(&eval.records, &out.join("records/pruned.csv"))?;
            let layers = plan
                .original_counts
                .iter()
                .map(|(id, &original)| {
                    let kept = plan.kept(id).len();
                    (id.clone(), LayerSummary { original, kept })
                })
                .collect();
            stages.push(stage_row("pruned", &eval, &pruned, &plan_cpu_reference(&pruned, &profile)?));
            let summary = PruneSummary {
                schedule: plan.schedule.clone(),
                layers,
            };
            Ok((pruned, eval, Some(summary)))
        })()
        .map_err(|e: Error| e.in_stage(stage))?
    };

    let stage = "calibrate";
    let (ranges, calibration_samples) = (|| {
        let (ranges, ids) = calibrate_subset(&deployed, &dataset, config.calibration_size, config.seed)?;
        save_ranges(&ranges, &out.join("calibration/ranges.json"))?;
        fs::write(out.join("calibration/samples.txt"), ids.join("\n") + "\n").map_err(|e| Error::io(out, e))?;
        Ok((ranges, ids))
    })()
    .map_err(|e: Error| e.in_stage(stage))?;

    let stage = "quantize";
    let (qgraph, int8_eval) = (|| {
        let q = quantize_graph(&deployed, &ranges)?;
        save_model(&q, &out.join("models/quantized.json"))?;
        let eval = evaluate(&q, &dataset)?;
        write_records_csv(&eval.records, &out.join("records/int8.csv"))?;
        Ok((q, eval))
    })()
    .map_err(|e: Error| e.in_stage(stage))?;

    let stage = "map";
    let plan = (|| {
        let plan = plan_deployment(&qgraph, &profile)?;
        plan.save(&out.join("plan/deployment.json"))?;
        fs::write(out.join("plan/deployment.txt"), plan.report_table()).map_err(|e| Error::io(out, e))?;
        Ok(plan)
    })()
    .map_err(|e: Error| e.in_stage(stage))?;
    stages.push(stage_row("int8", &int8_eval, &qgraph, &plan));

    let dataset_name = config
        .dataset
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stage = "estimate";
    (|| {
        write_json(&plan.estimates, &out.join("cost/estimate.json"))?;
        let rows: Vec<CostRow> = stages
            .iter()
            .map(|s| CostRow {
                model: graph.name.clone(),
                dataset: dataset_name.clone(),
                stage: s.stage.clone(),
                latency_ms: s.latency_ms,
                energy_mj: s.energy_mj,
                ram_peak_bytes: s.ram_peak_bytes,
                flash_bytes: s.flash_bytes,
                ram_ok: s.ram_peak_bytes <= profile.ram_budget_bytes,
                flash_ok: s.flash_bytes <= profile.flash_budget_bytes,
                deadline_ok: s.latency_ms <= profile.deadline_ms(),
            })
            .collect();
        write_cost_csv(&rows, &out.join("cost/costs.csv"))?;
        let mut w = csv::Writer::from_path(out.join("latency_energy.csv"))?;
        w.write_record(["model", "stage", "latency_ms", "energy_mj"])?;
        for s in &stages {
            w.write_record([graph.name.clone(), s.stage.clone(), s.latency_ms.to_string(), s.energy_mj.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(out, e))
    })()
    .map_err(|e: Error| e.in_stage(stage))?;

    let stage = "downlink";
    let downlink = (|| {
        let ground_records = match config.ground_model.as_deref() {
            None => None,
            Some(BASELINE) => Some(float_eval.records.clone()),
            Some(path) => {
                let ground = load_model(Path::new(path))?;
                let records = evaluate(&ground, &dataset)?.records;
                write_records_csv(&records, &out.join("records/ground.csv"))?;
                Some(records)
            }
        };
        let input_len = graph.tensors[&graph.inputs[0]].num_elements();
        let scenario = DownlinkScenario {
            num_samples: dataset.len(),
            bytes_per_sample: config.bytes_per_sample.unwrap_or(input_len as f64),
            threshold: config.threshold,
            onboard_records: int8_eval.records.clone(),
            ground_records,
        };
        let report = simulate(&scenario, &link)?;
        report.save(&out.join("downlink/report.json"))?;
        fs::write(out.join("downlink/summary.txt"), report.summary()).map_err(|e| Error::io(out, e))?;
        Ok(report)
    })()
    .map_err(|e: Error| e.in_stage(stage))?;

    let stage = "report";
    let float_flash = flash_breakdown(&graph, profile.per_op_metadata_bytes as usize).total() as f64;
    let report = PipelineReport {
        model: graph.name.clone(),
        dataset: dataset_name.clone(),
        samples: dataset.len(),
        seed: config.seed,
        stages,
        pruning,
        calibration_samples,
        int8_float_agreement: agreement(&deployed_eval, &int8_eval),
        flash_reduction_pct: 100.0 * (1.0 - plan.estimates.flash_bytes as f64 / float_flash),
        budget_flags: plan.estimates.budget_flags,
        downlink,
    };
    (|| {
        write_json(&report, &out.join("report.json"))?;
        let mut w = csv::Writer::from_path(out.join("report.csv"))?;
        w.write_record(["model", "dataset", "stage", "accuracy", "params", "flash_bytes", "ram_peak_bytes", "latency_ms", "energy_mj"])?;
        for s in &report.stages {
            w.write_record([
                report.model.clone(),
                dataset_name.clone(),
                s.stage.clone(),
                s.accuracy.to_string(),
                s.params.to_string(),
                s.flash_bytes.to_string(),
                s.ram_peak_bytes.to_string(),
                s.latency_ms.to_string(),
                s.energy_mj.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(out, e))
    })()
    .map_err(|e: Error| e.in_stage(stage))?;
    debug_assert!(validate(&qgraph).is_ok());
    Ok(report)
}
