//! Analytic latency and peak-compute model for pipelined slice inference.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    /// One sensor rotation.
    pub scan_period_ms: f64,
    /// Inference time of the full-scan model.
    pub full_inference_ms: f64,
    /// Fixed cost per slice invocation when n > 1.
    pub per_slice_overhead_ms: f64,
    /// Extra compute of carried state, as a fraction of full-scan peak.
    pub rnn_flops_fraction: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            scan_period_ms: 100.0,
            full_inference_ms: 16.0,
            per_slice_overhead_ms: 2.5,
            rnn_flops_fraction: 0.02,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.scan_period_ms,
            self.full_inference_ms,
            self.per_slice_overhead_ms,
            self.rnn_flops_fraction,
        ];
        if !(self.scan_period_ms > 0.0 && all.iter().all(|v| v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "latency model needs scan_period_ms > 0 and finite non-negative values".into(),
            ));
        }
        Ok(())
    }

    fn overhead(&self, n: usize) -> f64 {
        if n > 1 {
            self.per_slice_overhead_ms
        } else {
            0.0
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("slice count must be >= 1".into()));
    }
    Ok(())
}

/// First measurement at the start of a slice: wait for the slice, then
/// run its inference.
pub fn worst_case_latency(model: &LatencyModel, n: usize) -> Result<f64> {
    check_n(n)?;
    let n_f = n as f64;
    Ok(model.scan_period_ms / n_f + model.full_inference_ms / n_f + model.overhead(n))
}

/// Measurement time uniform within its slice.
pub fn expected_latency(model: &LatencyModel, n: usize) -> Result<f64> {
    check_n(n)?;
    let n_f = n as f64;
    Ok(model.scan_period_ms / n_f / 2.0 + model.full_inference_ms / n_f + model.overhead(n))
}

/// Peak compute of one invocation relative to the full-scan model.
pub fn peak_flops_fraction(n: usize, with_state: bool, model: &LatencyModel) -> Result<f64> {
    check_n(n)?;
    let state = if with_state { model.rnn_flops_fraction } else { 0.0 };
    Ok(1.0 / n as f64 + state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub n: usize,
    pub worst_case_ms: f64,
    pub expected_ms: f64,
    pub flops_fraction: f64,
    /// Worst case at n = 1 over worst case at n.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model: LatencyModel,
    pub rows: Vec<LatencyRow>,
}

pub fn latency_report(model: &LatencyModel, ns: &[usize]) -> Result<LatencyReport> {
    if ns.is_empty() {
        return Err(Error::InvalidInput("no slice counts given".into()));
    }
    model.validate()?;
    let baseline = worst_case_latency(model, 1)?;
    let rows = ns
        .iter()
        .map(|&n| {
            let worst = worst_case_latency(model, n)?;
            Ok(LatencyRow {
                n,
                worst_case_ms: worst,
                expected_ms: expected_latency(model, n)?,
                flops_fraction: peak_flops_fraction(n, false, model)?,
                speedup: baseline / worst,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LatencyReport {
        model: model.clone(),
        rows,
    })
}

pub const CSV_HEADER: &str = "n,worst_case_ms,expected_ms,flops_fraction,speedup";

impl LatencyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.n, r.worst_case_ms, r.expected_ms, r.flops_fraction, r.speedup
            ));
        }
        out
    }

    /// Writes JSON when the extension is `.json`, CSV otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = if path.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?
        } else {
            self.to_csv()
        };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
