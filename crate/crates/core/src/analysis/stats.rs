use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, MeasurementSummary};

pub const CDF_EXPORT_MAX_POINTS: usize = 100_000;

/// Nearest-rank quantile: the value at 1-based rank `⌈q·n⌉` of the sorted
/// input (rank 1 for `q = 0`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub(super) fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64, AnalysisError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(AnalysisError::BadQ(q));
    }
    if sorted.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: f64,
    pub fraction: f64,
}

/// Step CDF: one point per sample, `(sorted value, rank / n)`.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<CdfPoint>, AnalysisError> {
    empirical_cdf_capped(values, usize::MAX)
}

/// As [`empirical_cdf`], keeping at most `max_points` ranks spread uniformly
/// (the last rank is always kept so the curve ends at 1).
pub fn empirical_cdf_capped(
    values: &[f64],
    max_points: usize,
) -> Result<Vec<CdfPoint>, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let point = |rank: usize| CdfPoint {
        value: sorted[rank - 1],
        fraction: rank as f64 / n as f64,
    };
    if n <= max_points.max(1) {
        return Ok((1..=n).map(point).collect());
    }
    let m = max_points.max(1);
    Ok((1..=m).map(|k| point((k * n).div_ceil(m))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator; 0 for one run).
    pub std: f64,
}

pub fn summarize_values(values: &[f64]) -> Result<RunStats, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RunStats { n, mean, std })
}

/// Mean ± std of discharge over the valid runs of one group.
pub fn summarize_runs(runs: &[MeasurementSummary]) -> Result<RunStats, AnalysisError> {
    let mut values: Vec<f64> = runs
        .iter()
        .filter(|r| r.valid)
        .map(|r| r.discharge_mah)
        .collect();
    if values.is_empty() {
        return Err(AnalysisError::NoValidTraces);
    }
    // order-independent summation
    values.sort_by(f64::total_cmp);
    summarize_values(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    #[serde(flatten)]
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    pub a: String,
    pub b: String,
    /// `mean(b) − mean(a)`.
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// Ascending by mean discharge.
    pub ordered: Vec<GroupEntry>,
    pub pairwise: Vec<PairDiff>,
}

impl GroupReport {
    pub fn names(&self) -> Vec<&str> {
        self.ordered.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&RunStats> {
        self.ordered
            .iter()
            .find(|g| g.name == name)
            .map(|g| &g.stats)
    }

    pub fn diff(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(b)?.mean - self.get(a)?.mean)
    }
}

pub fn compare_groups(groups: &BTreeMap<String, RunStats>) -> Result<GroupReport, AnalysisError> {
    if groups.len() < 2 {
        return Err(AnalysisError::TooFewGroups);
    }
    let mut ordered: Vec<GroupEntry> = groups
        .iter()
        .map(|(name, stats)| GroupEntry {
            name: name.clone(),
            stats: *stats,
        })
        .collect();
    ordered.sort_by(|a, b| {
        a.stats
            .mean
            .total_cmp(&b.stats.mean)
            .then(a.name.cmp(&b.name))
    });
    let mut pairwise = Vec::new();
    for (i, a) in ordered.iter().enumerate() {
        for b in &ordered[i + 1..] {
            pairwise.push(PairDiff {
                a: a.name.clone(),
                b: b.name.clone(),
                diff: b.stats.mean - a.stats.mean,
            });
        }
    }
    Ok(GroupReport { ordered, pairwise })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub samples: Vec<f64>,
}

/// Latency per `(t_input, t_first_changed_frame)` probe.
pub fn latency_stats(probes: &[(f64, f64)]) -> Result<LatencyStats, AnalysisError> {
    if probes.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let samples = probes
        .iter()
        .enumerate()
        .map(|(i, (input, frame))| {
            if frame < input {
                Err(AnalysisError::NegativeLatency(i))
            } else {
                Ok(frame - input)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stats = summarize_values(&samples)?;
    Ok(LatencyStats {
        n: stats.n,
        mean_s: stats.mean,
        std_s: stats.std,
        samples,
    })
}
