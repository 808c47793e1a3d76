use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::OpKind;

/// Target device description. Power figures are illustrative configuration,
/// not measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareProfile {
    pub name: String,
    pub npu_supported_ops: BTreeSet<OpKind>,
    pub npu_throughput_gops: f64,
    pub npu_utilization: f64,
    pub cpu_freq_mhz: f64,
    pub cpu_macs_per_cycle: f64,
    pub cpu_utilization: f64,
    pub npu_power_w: f64,
    pub cpu_power_w: f64,
    pub idle_power_w: f64,
    /// Fixed launch cost of every kernel (fused group).
    pub per_op_overhead_us: f64,
    /// Added to a dependency edge whose endpoints run on different targets.
    pub transfer_latency_us: f64,
    pub ram_budget_bytes: u64,
    pub flash_budget_bytes: u64,
    /// Stack, runtime state and I/O buffers outside the activation arena.
    pub runtime_overhead_bytes: u64,
    /// Kernel descriptor stored in flash for every op.
    pub per_op_metadata_bytes: u64,
    pub deadline_fps: f64,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        HardwareProfile {
            name: "default".into(),
            npu_supported_ops: [OpKind::Conv2D, OpKind::DepthwiseConv2D, OpKind::ReLU, OpKind::Add].into(),
            npu_throughput_gops: 600.0,
            npu_utilization: 0.5,
            cpu_freq_mhz: 800.0,
            cpu_macs_per_cycle: 4.0,
            cpu_utilization: 1.0,
            npu_power_w: 0.3,
            cpu_power_w: 0.12,
            idle_power_w: 0.03,
            per_op_overhead_us: 5.0,
            transfer_latency_us: 0.0,
            ram_budget_bytes: 4_200_000,
            flash_budget_bytes: 4_000_000,
            runtime_overhead_bytes: 16_384,
            per_op_metadata_bytes: 32,
            deadline_fps: 5.0,
        }
    }
}

impl HardwareProfile {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("npu_throughput_gops", self.npu_throughput_gops),
            ("npu_utilization", self.npu_utilization),
            ("cpu_freq_mhz", self.cpu_freq_mhz),
            ("cpu_macs_per_cycle", self.cpu_macs_per_cycle),
            ("cpu_utilization", self.cpu_utilization),
            ("npu_power_w", self.npu_power_w),
            ("cpu_power_w", self.cpu_power_w),
            ("idle_power_w", self.idle_power_w),
            ("deadline_fps", self.deadline_fps),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
        }
        for (field, v) in [("npu_utilization", self.npu_utilization), ("cpu_utilization", self.cpu_utilization)] {
            if v > 1.0 {
                return Err(Error::config(field, format!("must be at most 1, got {v}")));
            }
        }
        for (field, v) in [("per_op_overhead_us", self.per_op_overhead_us), ("transfer_latency_us", self.transfer_latency_us)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("must be >= 0, got {v}")));
            }
        }
        if self.ram_budget_bytes == 0 {
            return Err(Error::config("ram_budget_bytes", "must be > 0"));
        }
        if self.flash_budget_bytes == 0 {
            return Err(Error::config("flash_budget_bytes", "must be > 0"));
        }
        Ok(())
    }

    /// Effective NPU rate in operations per second (one MAC = two operations).
    pub fn npu_ops_per_s(&self) -> f64 {
        self.npu_throughput_gops * 1e9 * self.npu_utilization
    }

    pub fn cpu_ops_per_s(&self) -> f64 {
        self.cpu_freq_mhz * 1e6 * self.cpu_macs_per_cycle * 2.0 * self.cpu_utilization
    }

    pub fn deadline_ms(&self) -> f64 {
        1000.0 / self.deadline_fps
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let profile: HardwareProfile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        profile.check().map_err(|e| match e {
            Error::Config { field, detail } => Error::config(format!("{}: {field}", path.display()), detail),
            other => other,
        })?;
        Ok(profile)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let p: HardwareProfile = serde_json::from_str(r#"{"name": "x", "npu_power_w": 0.5}"#).unwrap();
        assert_eq!(p.npu_throughput_gops, 600.0);
        assert_eq!(p.cpu_freq_mhz, 800.0);
        assert_eq!(p.ram_budget_bytes, 4_200_000);
        assert_eq!(p.npu_power_w, 0.5);
        assert!(p.npu_supported_ops.contains(&OpKind::Conv2D));
        assert!(!p.npu_supported_ops.contains(&OpKind::Softmax));
        p.check().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let p = HardwareProfile { cpu_power_w: 0.0, ..HardwareProfile::default() };
        assert!(matches!(p.check(), Err(Error::Config { field, .. }) if field == "cpu_power_w"));
        let p = HardwareProfile { ram_budget_bytes: 0, ..HardwareProfile::default() };
        assert!(p.check().is_err());
        assert!(serde_json::from_str::<HardwareProfile>(r#"{"npu_gops": 1}"#).is_err());
    }
}
