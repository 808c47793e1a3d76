use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tinysat_core::cost::{estimate_deployment, CostEstimate};
use tinysat_core::downlink::{simulate, DownlinkScenario, LinkBudget};
use tinysat_core::exec::{evaluate, load_dataset, load_ranges, read_records_csv, save_dataset, save_ranges, write_records_csv};
use tinysat_core::graph::{load_model, save_model, validate};
use tinysat_core::mapper::{plan_deployment, HardwareProfile};
use tinysat_core::pipeline::{
    bundled_convnet, bundled_dwsep, calibrate_subset, run_pipeline, synthetic_dataset, PipelineConfig, PipelineReport,
};
use tinysat_core::prune::{
    apply_masks, export_checkpoint, import_checkpoint, load_checkpoint, materialize, save_checkpoint, PrunePlan,
    DEFAULT_SCHEDULE,
};
use tinysat_core::quant::quantize_graph;

#[derive(Parser)]
#[command(name = "tinysat", version, about = "Prune, quantize, map and cost small CNNs for a satellite MCU+NPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a model and check its structure.
    ValidateModel {
        #[arg(long)]
        model: PathBuf,
    },
    /// Classify a dataset and write per-sample records.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Records CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the next pruning stage, or materialize a finished plan.
    PruneStage {
        /// Current (possibly masked and fine-tuned) model.
        #[arg(long)]
        model: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Plan to continue; defaults to `<out>/plan.json`, created if missing.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Stage fractions for a new plan, e.g. 0.1,0.05,0.05.
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<f64>>,
        /// Pipeline config to take the schedule from.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fine-tuned weights to load into the model first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Expected stage number (1-based); refuses to run any other stage.
        #[arg(long)]
        stage: Option<usize>,
        /// Physically remove the masked filters and write `<out>/pruned.json`.
        #[arg(long)]
        finalize: bool,
    },
    /// Record activation ranges over a seeded calibration subset.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Pipeline config supplying size and seed.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Lower a Float32 model to INT8.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ranges: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition, fuse, schedule and memory-plan a quantized model.
    Map {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        /// Deployment plan JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latency, energy, RAM and flash of a quantized model.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full versus confidence-thresholded transmission.
    SimulateDownlink {
        /// Onboard records CSV.
        #[arg(long)]
        records: PathBuf,
        /// Ground-model records CSV for hybrid accuracy.
        #[arg(long)]
        ground: Option<PathBuf>,
        #[arg(long)]
        link: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        threshold: f64,
        #[arg(long)]
        bytes_per_sample: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the stage table of a finished pipeline run.
    Report {
        /// Pipeline output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Write the bundled models and synthetic dataset.
    GenerateAssets {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

fn write_json(value: &CostEstimate, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn prune_stage(
    model: &Path,
    out: &Path,
    plan_path: Option<PathBuf>,
    schedule: Option<Vec<f64>>,
    config: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    stage: Option<usize>,
    finalize: bool,
) -> Result<()> {
    create_dir(out)?;
    let plan_path = plan_path.unwrap_or_else(|| out.join("plan.json"));
    let mut graph = load_model(model)?;
    if let Some(c) = checkpoint {
        graph = import_checkpoint(&graph, &load_checkpoint(&c)?)?;
    }
    if finalize {
        let plan = PrunePlan::load(&plan_path)?;
        if !plan.is_complete() {
            bail!("plan {} has run {} of {} stages", plan_path.display(), plan.stages.len(), plan.schedule.len());
        }
        let pruned = materialize(&graph, &plan)?;
        let path = out.join("pruned.json");
        save_model(&pruned, &path)?;
        println!("{}: {} -> {} parameters", path.display(), graph.param_count(), pruned.param_count());
        return Ok(());
    }
    let mut plan = if plan_path.exists() {
        PrunePlan::load(&plan_path)?
    } else {
        let schedule = match (schedule, config) {
            (Some(s), _) => s,
            (None, Some(c)) => PipelineConfig::load(&c)?.prune.schedule,
            (None, None) => DEFAULT_SCHEDULE.to_vec(),
        };
        PrunePlan::new(&graph, &schedule)?
    };
    let k = plan.stages.len() + 1;
    if let Some(expected) = stage.filter(|&s| s != k) {
        bail!("plan {} is at stage {k}, not {expected}", plan_path.display());
    }
    let removed = plan.next_stage(&graph)?.clone();
    let masked = apply_masks(&graph, &plan)?;
    plan.save(&plan_path)?;
    save_model(&masked, &out.join("masked.json"))?;
    save_checkpoint(&export_checkpoint(&masked), &out.join(format!("stage{k}.ckpt.json")))?;
    for (layer, filters) in &removed {
        println!("stage {k}: {layer} removed {filters:?}, {} kept", plan.kept(layer).len());
    }
    Ok(())
}

fn print_report(report: &PipelineReport) {
    println!("model {}  dataset {} ({} samples)  seed {}", report.model, report.dataset, report.samples, report.seed);
    println!(
        "{:<8} {:>9} {:>9} {:>12} {:>12} {:>11} {:>10}",
        "stage", "accuracy", "params", "flash_B", "ram_B", "latency_ms", "energy_mJ"
    );
    for s in &report.stages {
        println!(
            "{:<8} {:>9.4} {:>9} {:>12} {:>12} {:>11.3} {:>10.3}",
            s.stage, s.accuracy, s.params, s.flash_bytes, s.ram_peak_bytes, s.latency_ms, s.energy_mj
        );
    }
    println!(
        "flash reduction {:.2}%  int8/float agreement {:.4}  ram_ok {}  flash_ok {}  deadline_ok {}",
        report.flash_reduction_pct,
        report.int8_float_agreement,
        report.budget_flags.ram_ok,
        report.budget_flags.flash_ok,
        report.budget_flags.deadline_ok
    );
    print!("{}", report.downlink.summary());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ValidateModel { model } => {
            let g = load_model(&model)?;
            let report = validate(&g);
            if !report.is_ok() {
                bail!("{}: {report}", model.display());
            }
            println!("{}: ok ({} nodes, {} parameters)", g.name, g.nodes.len(), g.param_count());
        }
        Command::Evaluate { model, dataset, out } => {
            let g = load_model(&model)?;
            let input_len = g.tensors[&g.inputs[0]].num_elements();
            let ds = load_dataset(&dataset, Some(input_len))?;
            let eval = evaluate(&g, &ds)?;
            if let Some(out) = out {
                write_records_csv(&eval.records, &out)?;
            }
            println!("accuracy {:.4} on {} samples", eval.accuracy, eval.records.len());
        }
        Command::PruneStage {
            model,
            out,
            plan,
            schedule,
            config,
            checkpoint,
            stage,
            finalize,
        } => prune_stage(&model, &out, plan, schedule, config, checkpoint, stage, finalize)?,
        Command::Calibrate {
            model,
            dataset,
            out,
            size,
            seed,
            config,
        } => {
            let cfg = config.map(|c| PipelineConfig::load(&c)).transpose()?;
            let size = size.or(cfg.as_ref().map(|c| c.calibration_size)).unwrap_or(64);
            let seed = seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let g = load_model(&model)?;
            let input_len = g.tensors[&g.inputs[0]].num_elements();
            let ds = load_dataset(&dataset, Some(input_len))?;
            let (ranges, ids) = calibrate_subset(&g, &ds, size, seed)?;
            save_ranges(&ranges, &out)?;
            println!("{} tensors calibrated on {} samples", ranges.len(), ids.len());
        }
        Command::Quantize { model, ranges, out } => {
            let g = load_model(&model)?;
            let q = quantize_graph(&g, &load_ranges(&ranges)?)?;
            save_model(&q, &out)?;
            println!("{}: quantized {} weight tensors", out.display(), q.nodes.iter().filter(|n| n.kind.has_weights()).count());
        }
        Command::Map { model, profile, out } => {
            let q = load_model(&model)?;
            let plan = plan_deployment(&q, &HardwareProfile::load(&profile)?)?;
            if let Some(out) = out {
                plan.save(&out)?;
            }
            print!("{}", plan.report_table());
        }
        Command::Estimate { model, profile, out } => {
            let q = load_model(&model)?;
            let profile = HardwareProfile::load(&profile)?;
            let plan = plan_deployment(&q, &profile)?;
            let e = estimate_deployment(&q, &plan, &profile);
            if let Some(out) = out {
                write_json(&e, &out)?;
            }
            println!(
                "latency {:.3} ms  energy {:.3} mJ  ram {} B  flash {} B  ram_ok {}  flash_ok {}  deadline_ok {}",
                e.latency_ms, e.energy_mj, e.ram_peak_bytes, e.flash_bytes, e.budget_flags.ram_ok, e.budget_flags.flash_ok, e.budget_flags.deadline_ok
            );
        }
        Command::SimulateDownlink {
            records,
            ground,
            link,
            threshold,
            bytes_per_sample,
            out,
        } => {
            let onboard = read_records_csv(&records)?;
            let scenario = DownlinkScenario {
                num_samples: onboard.len(),
                bytes_per_sample,
                threshold,
                onboard_records: onboard,
                ground_records: ground.map(|g| read_records_csv(&g)).transpose()?,
            };
            let report = simulate(&scenario, &LinkBudget::load(&link)?)?;
            if let Some(out) = out {
                report.save(&out)?;
            }
            print!("{}", report.summary());
        }
        Command::Report { out } => {
            let path = out.join("report.json");
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let report: PipelineReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            print_report(&report);
        }
        Command::Run { config, out, seed, profile } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(profile) = profile {
                cfg.profile = profile;
            }
            let report = run_pipeline(&cfg)?;
            print_report(&report);
            println!("outputs in {}", cfg.output_dir.display());
        }
        Command::GenerateAssets { out, seed, samples } => {
            create_dir(&out.join("models"))?;
            save_model(&bundled_convnet(seed)?, &out.join("models/convnet.json"))?;
            save_model(&bundled_dwsep(seed)?, &out.join("models/dwsep.json"))?;
            save_dataset(&synthetic_dataset(samples, seed), &out.join("data/synthetic"))?;
            println!("wrote models and {samples} samples under {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
