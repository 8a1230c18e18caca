use serde::{Deserialize, Serialize};

use super::trace::SimTrace;
use crate::error::{Error, Result};

pub const DEFAULT_SETTLE_BAND: f64 = 0.02;

/// Step-response figures of merit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// s; meaningful only when `settled`
    pub ts: f64,
    /// percent, ≥ 0
    pub mp: f64,
    /// same unit as the reference
    pub ess: f64,
    /// mean of the final 10% of samples
    pub yss: f64,
    pub settle_band: f64,
    /// false when the last sample is still outside the band
    pub settled: bool,
}

impl StepMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub fn step_metrics(trace: &SimTrace, settle_band: f64) -> Result<StepMetrics> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "trace has {n} samples, need at least 10"
        )));
    }
    trace.validate()?;
    if !(settle_band > 0.0 && settle_band.is_finite()) {
        return Err(Error::param("settle_band", "must be > 0"));
    }
    let tail = (n / 10).max(1);
    let yss = trace.y[n - tail..].iter().sum::<f64>() / tail as f64;
    let r_final = trace.r[n - 1];
    if yss.abs() <= 1e-12 {
        if r_final != 0.0 {
            return Err(Error::DegenerateResponse);
        }
        // zero reference and a response at rest
        if trace.y.iter().all(|y| y.abs() <= 1e-12) {
            return Ok(StepMetrics {
                ts: 0.0,
                mp: 0.0,
                ess: 0.0,
                yss,
                settle_band,
                settled: true,
            });
        }
        return Err(Error::DegenerateResponse);
    }

    let ymax = trace.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mp = ((ymax - yss) / yss).max(0.0) * 100.0;
    let tol = settle_band * yss.abs();
    let last_out = trace.y.iter().rposition(|y| (y - yss).abs() > tol);
    let (ts, settled) = match last_out {
        None => (trace.t[0], true),
        Some(i) if i + 1 < n => (trace.t[i + 1], true),
        Some(_) => (trace.t[n - 1], false),
    };
    Ok(StepMetrics {
        ts: ts - trace.t[0],
        mp,
        ess: (r_final - yss).abs(),
        yss,
        settle_band,
        settled,
    })
}
