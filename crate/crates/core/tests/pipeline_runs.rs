mod common;

use std::fs;

use common::{assets, snapshot};
use tinysat_core::cost::CostEstimate;
use tinysat_core::downlink::DownlinkReport;
use tinysat_core::exec::{load_ranges, read_records_csv};
use tinysat_core::graph::{load_model, validate};
use tinysat_core::mapper::DeploymentPlan;
use tinysat_core::pipeline::{run_pipeline, PipelineConfig};
use tinysat_core::prune::PrunePlan;

fn config(name: &str, out: &std::path::Path) -> PipelineConfig {
    let mut c = PipelineConfig::load(&assets().join(format!("configs/{name}.json"))).unwrap();
    c.output_dir = out.join(name);
    c
}

#[test]
fn same_seed_gives_identical_trees() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config("convnet", tmp.path());
    run_pipeline(&c).unwrap();
    let first = snapshot(&c.output_dir);
    run_pipeline(&c).unwrap();
    assert_eq!(first, snapshot(&c.output_dir));

    let mut elsewhere = c.clone();
    elsewhere.output_dir = tmp.path().join("again");
    run_pipeline(&elsewhere).unwrap();
    assert_eq!(first, snapshot(&elsewhere.output_dir));
}

#[test]
fn artifacts_reload_and_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config("dwsep", tmp.path());
    let report = run_pipeline(&c).unwrap();
    let out = &c.output_dir;
    for m in ["float", "pruned", "quantized"] {
        let g = load_model(&out.join(format!("models/{m}.json"))).unwrap();
        assert!(validate(&g).is_ok(), "{m}");
    }
    for r in ["float", "pruned", "int8"] {
        assert_eq!(read_records_csv(&out.join(format!("records/{r}.csv"))).unwrap().len(), 200);
    }
    assert!(!load_ranges(&out.join("calibration/ranges.json")).unwrap().is_empty());
    assert!(PrunePlan::load(&out.join("prune/plan.json")).unwrap().is_complete());
    let plan = DeploymentPlan::load(&out.join("plan/deployment.json")).unwrap();
    let est: CostEstimate = serde_json::from_str(&fs::read_to_string(out.join("cost/estimate.json")).unwrap()).unwrap();
    assert_eq!(est, plan.estimates);
    let dl: DownlinkReport = serde_json::from_str(&fs::read_to_string(out.join("downlink/report.json")).unwrap()).unwrap();
    assert_eq!(dl, report.downlink);
    assert!(report.flash_reduction_pct >= 70.0);
    assert!(!tmp.path().join(".dwsep.partial").exists());
}

#[test]
fn pruning_can_be_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config("convnet", tmp.path());
    c.prune.skip = true;
    let report = run_pipeline(&c).unwrap();
    assert!(report.pruning.is_none());
    assert!(!c.output_dir.join("prune").exists());
    assert!(!c.output_dir.join("models/pruned.json").exists());
    assert_eq!(report.stages.iter().map(|s| s.stage.as_str()).collect::<Vec<_>>(), ["float", "int8"]);
}

#[test]
fn failed_run_leaves_nothing_behind() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config("convnet", tmp.path());
    c.link = tmp.path().join("missing-link.json");
    let err = run_pipeline(&c).unwrap_err().to_string();
    assert!(err.contains("load") && err.contains("missing-link.json"), "{err}");
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);

    // an earlier good run survives a later failure
    let good = config("convnet", tmp.path());
    run_pipeline(&good).unwrap();
    let before = snapshot(&good.output_dir);
    let mut bad = good.clone();
    bad.prune.schedule = vec![0.9, 0.9];
    assert!(run_pipeline(&bad).is_err());
    assert_eq!(before, snapshot(&good.output_dir));
    assert!(!tmp.path().join(".convnet.partial").exists());
}
