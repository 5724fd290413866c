use serde::{Deserialize, Serialize};

use super::{split_label, Report};

/// An expectation evaluated against a scenario report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// Median of the per-run median currents lies within `target ± tolerance`.
    MedianCurrentWithin {
        group: String,
        variant: String,
        target_ma: f64,
        tolerance_ma: f64,
    },
    /// Two labelled jobs produced bit-identical traces, run by run.
    IdenticalTraces { a: String, b: String },
    /// Mean discharge strictly increases along `groups` within one variant.
    DischargeOrder { variant: String, groups: Vec<String> },
    /// The per-group change in mean discharge from one variant to another is
    /// the same for every group, up to `tolerance` of the smallest change.
    ConstantOffset { from: String, to: String, tolerance: f64 },
    /// The group's mean discharge moves by at most one pooled standard
    /// deviation across variants.
    SpreadWithinStd { group: String },
    /// The group's mean discharge under `variant` is strictly below every
    /// other variant.
    LowestVariant { group: String, variant: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn describe(&self) -> String {
        match self {
            Check::MedianCurrentWithin {
                group,
                variant,
                target_ma,
                tolerance_ma,
            } => format!("median current of {group}:{variant} within {target_ma} ± {tolerance_ma} mA"),
            Check::IdenticalTraces { a, b } => format!("{a} and {b} traces identical"),
            Check::DischargeOrder { variant, groups } => {
                format!("{variant}: discharge order {}", groups.join(" < "))
            }
            Check::ConstantOffset { from, to, tolerance } => {
                format!("{from} -> {to} offset equal across groups within {:.0}%", tolerance * 100.0)
            }
            Check::SpreadWithinStd { group } => format!("{group}: spread across variants within 1 std"),
            Check::LowestVariant { group, variant } => format!("{group}: {variant} lowest discharge"),
        }
    }
}

fn mean_discharge(report: &Report, group: &str, variant: &str) -> Result<f64, String> {
    report
        .series(group, variant)
        .and_then(|s| s.discharge)
        .map(|d| d.mean)
        .ok_or_else(|| format!("no valid runs for {group}:{variant}"))
}

fn run(check: &Check, report: &Report) -> Result<String, String> {
    match check {
        Check::MedianCurrentWithin {
            group,
            variant,
            target_ma,
            tolerance_ma,
        } => {
            let m = report
                .series(group, variant)
                .and_then(|s| s.median_current_ma)
                .ok_or_else(|| format!("no runs for {group}:{variant}"))?;
            let detail = format!("median {m:.3} mA");
            if (m - target_ma).abs() <= *tolerance_ma {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        Check::IdenticalTraces { a, b } => {
            let digests = |label: &str| {
                let (g, v) = split_label(label);
                report.runs_of(&g, &v).map(|r| r.digest.clone()).collect::<Vec<_>>()
            };
            let (da, db) = (digests(a), digests(b));
            if da.is_empty() {
                return Err(format!("no runs for {a}"));
            }
            if da == db {
                Ok(format!("{} run(s), digests {}", da.len(), da.join(",")))
            } else {
                Err(format!("{} vs {}", da.join(","), db.join(",")))
            }
        }
        Check::DischargeOrder { variant, groups } => {
            let means = groups
                .iter()
                .map(|g| mean_discharge(report, g, variant))
                .collect::<Result<Vec<_>, _>>()?;
            let detail = groups
                .iter()
                .zip(&means)
                .map(|(g, m)| format!("{g}={m:.4}"))
                .collect::<Vec<_>>()
                .join(" ");
            if means.windows(2).all(|w| w[0] < w[1]) {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        Check::ConstantOffset { from, to, tolerance } => {
            let mut groups: Vec<&str> = report
                .series
                .iter()
                .filter(|s| s.variant == *from)
                .map(|s| s.group.as_str())
                .collect();
            groups.dedup();
            let diffs = groups
                .iter()
                .map(|g| Ok((*g, mean_discharge(report, g, to)? - mean_discharge(report, g, from)?)))
                .collect::<Result<Vec<_>, String>>()?;
            if diffs.is_empty() {
                return Err(format!("no groups in {from}"));
            }
            let lo = diffs.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
            let hi = diffs.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
            let detail = diffs
                .iter()
                .map(|(g, d)| format!("{g}={d:.4}"))
                .collect::<Vec<_>>()
                .join(" ");
            let smallest = diffs.iter().map(|d| d.1.abs()).fold(f64::INFINITY, f64::min);
            if hi - lo <= tolerance * smallest {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        Check::SpreadWithinStd { group } => {
            let stats: Vec<_> = report
                .series
                .iter()
                .filter(|s| s.group == *group)
                .filter_map(|s| s.discharge)
                .collect();
            if stats.len() < 2 {
                return Err(format!("{group} has fewer than two variants"));
            }
            let lo = stats.iter().map(|s| s.mean).fold(f64::INFINITY, f64::min);
            let hi = stats.iter().map(|s| s.mean).fold(f64::NEG_INFINITY, f64::max);
            let pooled = (stats.iter().map(|s| s.std * s.std).sum::<f64>() / stats.len() as f64).sqrt();
            let detail = format!("spread {:.4} mAh, pooled std {pooled:.4} mAh", hi - lo);
            if hi - lo <= pooled {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        Check::LowestVariant { group, variant } => {
            let target = mean_discharge(report, group, variant)?;
            let others: Vec<(String, f64)> = report
                .series
                .iter()
                .filter(|s| s.group == *group && s.variant != *variant)
                .filter_map(|s| Some((s.variant.clone(), s.discharge?.mean)))
                .collect();
            if others.is_empty() {
                return Err(format!("{group} has no other variants"));
            }
            let detail = format!(
                "{variant}={target:.4} others {}",
                others
                    .iter()
                    .map(|(v, m)| format!("{v}={m:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            if others.iter().all(|(_, m)| target < *m) {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
    }
}

pub fn evaluate(checks: &[Check], report: &Report) -> Vec<CheckResult> {
    checks
        .iter()
        .map(|c| {
            let (passed, detail) = match run(c, report) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                check: c.describe(),
                passed,
                detail,
            }
        })
        .collect()
}
