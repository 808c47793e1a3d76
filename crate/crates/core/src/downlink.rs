//! Downlink trade-off of onboard inference: sending every capture versus
//! sending only the samples the onboard model is unsure about.
//!
//! Sizes use decimal units (1 KB = 1e3 B, 1 MB = 1e6 B).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::InferenceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    pub data_rate_bps: f64,
    pub passes_per_day: u32,
    pub pass_duration_s: f64,
}

impl LinkBudget {
    pub fn check(&self) -> Result<()> {
        if !(self.data_rate_bps.is_finite() && self.data_rate_bps > 0.0) {
            return Err(Error::config("data_rate_bps", format!("must be > 0, got {}", self.data_rate_bps)));
        }
        if self.passes_per_day == 0 {
            return Err(Error::config("passes_per_day", "must be > 0"));
        }
        if !(self.pass_duration_s.is_finite() && self.pass_duration_s > 0.0) {
            return Err(Error::config("pass_duration_s", format!("must be > 0, got {}", self.pass_duration_s)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let link: LinkBudget = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        link.check().map_err(|e| match e {
            Error::Config { field, detail } => Error::config(format!("{}: {field}", path.display()), detail),
            other => other,
        })?;
        Ok(link)
    }
}

/// Bytes that fit through the link per day.
pub fn daily_budget(link: &LinkBudget) -> f64 {
    link.data_rate_bps * link.pass_duration_s * link.passes_per_day as f64 / 8.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkScenario {
    pub num_samples: usize,
    pub bytes_per_sample: f64,
    /// Samples with confidence strictly below this are transmitted.
    pub threshold: f64,
    pub onboard_records: Vec<InferenceRecord>,
    /// Ground model on the same samples, if available.
    pub ground_records: Option<Vec<InferenceRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownlinkReport {
    pub num_samples: usize,
    pub bytes_per_sample: f64,
    pub threshold: f64,
    pub full_volume_bytes: f64,
    pub transmitted_count: usize,
    pub transmitted_fraction: f64,
    pub transmitted_volume_bytes: f64,
    pub reduction_pct: f64,
    pub daily_budget_bytes: f64,
    pub fits_daily_budget: bool,
    pub onboard_accuracy: f64,
    pub hybrid_accuracy: Option<f64>,
}

fn by_id(records: &[InferenceRecord], what: &str) -> Result<BTreeMap<String, InferenceRecord>> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.sample_id.clone(), r.clone()).is_some() {
            return Err(Error::Downlink(format!("duplicate sample {} in {what} records", r.sample_id)));
        }
    }
    Ok(map)
}

pub fn simulate(scenario: &DownlinkScenario, link: &LinkBudget) -> Result<DownlinkReport> {
    link.check()?;
    let th = scenario.threshold;
    if !(th > 0.0 && th <= 1.0) {
        return Err(Error::Downlink(format!("threshold {th} outside (0, 1]")));
    }
    if !(scenario.bytes_per_sample.is_finite() && scenario.bytes_per_sample > 0.0) {
        return Err(Error::Downlink(format!("bytes_per_sample {} must be > 0", scenario.bytes_per_sample)));
    }
    let n = scenario.num_samples;
    if n == 0 || scenario.onboard_records.len() != n {
        return Err(Error::Downlink(format!(
            "{} onboard records for {n} samples",
            scenario.onboard_records.len()
        )));
    }
    let onboard = by_id(&scenario.onboard_records, "onboard")?;
    let ground = match &scenario.ground_records {
        Some(g) => {
            let g = by_id(g, "ground")?;
            if let Some(id) = onboard.keys().find(|id| !g.contains_key(*id)).or_else(|| g.keys().find(|id| !onboard.contains_key(*id))) {
                return Err(Error::Downlink(format!("sample {id} is not in both record sets")));
            }
            Some(g)
        }
        None => None,
    };

    let transmitted: Vec<&String> = onboard.iter().filter(|(_, r)| r.confidence < th).map(|(id, _)| id).collect();
    let transmitted_count = transmitted.len();
    let onboard_correct = onboard.values().filter(|r| r.correct).count();
    let hybrid_accuracy = ground.map(|g| {
        let kept_correct = onboard.values().filter(|r| r.confidence >= th && r.correct).count();
        let ground_correct = transmitted.iter().filter(|id| g[**id].correct).count();
        (kept_correct + ground_correct) as f64 / n as f64
    });
    let full_volume_bytes = n as f64 * scenario.bytes_per_sample;
    let transmitted_volume_bytes = transmitted_count as f64 * scenario.bytes_per_sample;
    let daily_budget_bytes = daily_budget(link);
    Ok(DownlinkReport {
        num_samples: n,
        bytes_per_sample: scenario.bytes_per_sample,
        threshold: th,
        full_volume_bytes,
        transmitted_count,
        transmitted_fraction: transmitted_count as f64 / n as f64,
        transmitted_volume_bytes,
        reduction_pct: 100.0 * (1.0 - transmitted_count as f64 / n as f64),
        daily_budget_bytes,
        fits_daily_budget: transmitted_volume_bytes <= daily_budget_bytes,
        onboard_accuracy: onboard_correct as f64 / n as f64,
        hybrid_accuracy,
    })
}

impl DownlinkReport {
    pub fn summary(&self) -> String {
        let mb = |b: f64| b / 1e6;
        let mut s = String::new();
        let _ = writeln!(s, "samples              {}", self.num_samples);
        let _ = writeln!(s, "full volume          {:.4} MB", mb(self.full_volume_bytes));
        let _ = writeln!(
            s,
            "transmitted          {} ({:.4}%) below confidence {}",
            self.transmitted_count,
            100.0 * self.transmitted_fraction,
            self.threshold
        );
        let _ = writeln!(s, "transmitted volume   {:.4} MB", mb(self.transmitted_volume_bytes));
        let _ = writeln!(s, "reduction            {:.4}%", self.reduction_pct);
        let _ = writeln!(
            s,
            "daily budget         {:.4} MB ({})",
            mb(self.daily_budget_bytes),
            if self.fits_daily_budget { "fits" } else { "exceeded" }
        );
        let _ = writeln!(s, "onboard accuracy     {:.4}", self.onboard_accuracy);
        match self.hybrid_accuracy {
            Some(a) => {
                let _ = writeln!(s, "hybrid accuracy      {a:.4}");
            }
            None => {
                let _ = writeln!(s, "hybrid accuracy      n/a (no ground records)");
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
