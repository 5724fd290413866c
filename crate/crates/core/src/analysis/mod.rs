//! Turns traces into reportable quantities: discharge (mAh), empirical
//! CDFs and quantiles, repetition summaries, group comparisons and latency
//! statistics. Everything here is a pure function of its inputs.

pub mod plot;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwsim::{PowerSample, TraceMetadata};

pub use stats::{
    compare_groups, empirical_cdf, empirical_cdf_capped, latency_stats, quantile, summarize_runs,
    summarize_values, CdfPoint, GroupEntry, GroupReport, LatencyStats, PairDiff, RunStats,
    CDF_EXPORT_MAX_POINTS,
};

/// Quantile levels reported in every summary.
pub const SUMMARY_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
/// Traces losing more than this fraction of samples are flagged invalid.
pub const DEFAULT_LOSS_THRESHOLD: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum AnalysisError {
    #[error("need at least two samples")]
    TooFewSamples,
    #[error("trace lost {0:.4} of its samples")]
    LossyTrace(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("quantile level {0} outside [0, 1]")]
    BadQ(f64),
    #[error("no valid traces in group")]
    NoValidTraces,
    #[error("need at least two groups")]
    TooFewGroups,
    #[error("probe {0} observed its frame before the input")]
    NegativeLatency(usize),
    #[error("timestamps not strictly increasing at sample {0}")]
    NonMonotonic(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMetadata,
    pub samples: Vec<PowerSample>,
}

impl Trace {
    pub fn new(meta: TraceMetadata, samples: Vec<PowerSample>) -> Self {
        Self { meta, samples }
    }

    pub fn check_order(&self) -> Result<(), AnalysisError> {
        match self.samples.windows(2).position(|w| w[1].t <= w[0].t) {
            Some(i) => Err(AnalysisError::NonMonotonic(i + 1)),
            None => Ok(()),
        }
    }

    pub fn currents(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.current_ma).collect()
    }

    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Intervals between consecutive samples that are not separated by a gap.
    fn contiguous_pairs(&self) -> impl Iterator<Item = (&PowerSample, &PowerSample)> {
        let max_dt = if self.meta.rate_hz > 0 {
            1.5 / self.meta.rate_hz as f64
        } else {
            f64::INFINITY
        };
        self.samples
            .windows(2)
            .map(|w| (&w[0], &w[1]))
            .filter(move |(a, b)| b.t - a.t <= max_dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    pub loss_threshold: f64,
    /// Integrate even when the trace is over the loss threshold.
    pub force: bool,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            loss_threshold: DEFAULT_LOSS_THRESHOLD,
            force: false,
        }
    }
}

/// Charge drawn over the trace in mAh, trapezoidal rule over consecutive
/// samples. Intervals spanning lost samples contribute nothing.
pub fn integrate_discharge(trace: &Trace, opts: IntegrationOptions) -> Result<f64, AnalysisError> {
    if trace.samples.len() < 2 {
        return Err(AnalysisError::TooFewSamples);
    }
    let loss = trace.meta.loss_fraction();
    if loss > opts.loss_threshold && !opts.force {
        return Err(AnalysisError::LossyTrace(loss));
    }
    let ma_s: f64 = trace
        .contiguous_pairs()
        .map(|(a, b)| 0.5 * (a.current_ma + b.current_ma) * (b.t - a.t))
        .sum();
    Ok(ma_s / 3600.0)
}

/// Energy in mWh using each sample's voltage, same rule as
/// [`integrate_discharge`].
pub fn integrate_energy(trace: &Trace) -> f64 {
    let mw_s: f64 = trace
        .contiguous_pairs()
        .map(|(a, b)| 0.5 * (a.current_ma * a.voltage_v + b.current_ma * b.voltage_v) * (b.t - a.t))
        .sum();
    mw_s / 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSummary {
    pub device_id: String,
    pub job_id: Option<u64>,
    pub repetition: u32,
    pub discharge_mah: f64,
    pub energy_mwh: f64,
    pub mean_current_ma: f64,
    pub median_current_ma: f64,
    pub duration_s: f64,
    pub sample_count: usize,
    pub sample_loss_fraction: f64,
    /// `(level, value)` pairs at [`SUMMARY_QUANTILES`].
    pub quantiles: Vec<(f64, f64)>,
    /// False when the trace lost more samples than the threshold allows.
    pub valid: bool,
}

pub fn summarize_trace(
    trace: &Trace,
    opts: IntegrationOptions,
) -> Result<MeasurementSummary, AnalysisError> {
    trace.check_order()?;
    let discharge_mah = integrate_discharge(
        trace,
        IntegrationOptions {
            force: true,
            ..opts
        },
    )?;
    let loss = trace.meta.loss_fraction();
    let mut currents = trace.currents();
    currents.sort_by(f64::total_cmp);
    let quantiles = SUMMARY_QUANTILES
        .iter()
        .map(|q| Ok((*q, stats::quantile_sorted(&currents, *q)?)))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(MeasurementSummary {
        device_id: trace.meta.device_id.clone(),
        job_id: trace.meta.job_id,
        repetition: trace.meta.repetition,
        discharge_mah,
        energy_mwh: integrate_energy(trace),
        mean_current_ma: currents.iter().sum::<f64>() / currents.len() as f64,
        median_current_ma: stats::quantile_sorted(&currents, 0.5)?,
        duration_s: trace.duration_s(),
        sample_count: currents.len(),
        sample_loss_fraction: loss,
        quantiles,
        valid: loss <= opts.loss_threshold,
    })
}

#[cfg(test)]
mod tests;
