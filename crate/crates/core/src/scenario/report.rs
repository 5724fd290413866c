//! Scenario and job reports: per-run rows, per-series statistics, group
//! comparisons per variant, and gnuplot `.dat` files for the figures.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CheckResult;
use crate::agent::{ExecutionRecord, Outcome};
use crate::analysis::plot::{write_bars_dat, write_cdf_dat};
use crate::analysis::{compare_groups, empirical_cdf_capped, quantile, summarize_runs, CdfPoint, GroupReport, RunStats};
use crate::coordinator::ArtifactBundle;

/// Points per series in the CDF plot files.
const PLOT_CDF_POINTS: usize = 1000;

/// The artifacts of one finished job, tagged with its `group:variant` label.
#[derive(Debug, Clone, PartialEq)]
pub struct JobInput {
    pub label: String,
    pub bundle: ArtifactBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub group: String,
    pub variant: String,
    pub repetition: u32,
    pub discharge_mah: f64,
    pub energy_mwh: f64,
    pub mean_current_ma: f64,
    pub median_current_ma: f64,
    pub duration_s: f64,
    pub samples: u64,
    pub lost: u64,
    pub valid: bool,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub group: String,
    pub variant: String,
    pub runs: usize,
    /// Mean ± std discharge over the valid runs.
    pub discharge: Option<RunStats>,
    /// Median of the per-run median currents.
    pub median_current_ma: Option<f64>,
    pub mean_current_ma: Option<f64>,
    pub device_cpu_median_pct: Option<f64>,
    pub controller_cpu_median_pct: Option<f64>,
    pub controller_cpu_p90_pct: Option<f64>,
    pub controller_mem_mean_pct: Option<f64>,
    pub upload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub group: String,
    pub variant: String,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Option<String>,
    pub series: Vec<SeriesStats>,
    /// Per variant, its groups ordered by mean discharge.
    pub comparisons: BTreeMap<String, GroupReport>,
    pub runs: Vec<RunRow>,
    pub failures: Vec<FailureRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn series(&self, group: &str, variant: &str) -> Option<&SeriesStats> {
        self.series
            .iter()
            .find(|s| s.group == group && s.variant == variant)
    }

    pub fn runs_of<'a>(&'a self, group: &'a str, variant: &'a str) -> impl Iterator<Item = &'a RunRow> + 'a {
        self.runs
            .iter()
            .filter(move |r| r.group == group && r.variant == variant)
    }

    pub fn variants(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.series.iter().map(|s| s.variant.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// True when every check passed and no job failed.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

/// Splits `group:variant`; a bare label is its own group.
pub fn split_label(label: &str) -> (String, String) {
    match label.split_once(':') {
        Some((g, v)) => (g.to_string(), v.to_string()),
        None => (label.to_string(), "default".to_string()),
    }
}

struct Parsed<'a> {
    group: String,
    variant: String,
    record: Option<ExecutionRecord>,
    bundle: &'a ArtifactBundle,
}

fn parse(inputs: &[JobInput]) -> Vec<Parsed<'_>> {
    let mut parsed: Vec<Parsed> = inputs
        .iter()
        .map(|i| {
            let (group, variant) = split_label(&i.label);
            let record = i
                .bundle
                .file("summary.json")
                .and_then(|b| serde_json::from_slice(b).ok());
            Parsed {
                group,
                variant,
                record,
                bundle: &i.bundle,
            }
        })
        .collect();
    parsed.sort_by(|a, b| (&a.group, &a.variant).cmp(&(&b.group, &b.variant)));
    parsed
}

fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5).ok()
}

fn csv_column(bytes: Option<&[u8]>, col: usize) -> Vec<f64> {
    let Some(bytes) = bytes else {
        return Vec::new();
    };
    String::from_utf8_lossy(bytes)
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(col)?.trim().parse().ok())
        .collect()
}

fn series_values(p: &Parsed, dir: &str, col: usize) -> Vec<f64> {
    let reps = p.record.as_ref().map_or(0, |r| r.traces.len());
    (0..reps)
        .flat_map(|rep| csv_column(p.bundle.file(&format!("{dir}/rep{rep}.csv")), col))
        .collect()
}

/// Builds a report from job artifacts. The output depends only on the
/// artifacts and labels, never on job ids or wall time, so the same seeded
/// jobs always give the same report.
pub fn build_report(scenario: Option<&str>, inputs: &[JobInput]) -> Report {
    let mut series = Vec::new();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for p in parse(inputs) {
        let Some(record) = &p.record else {
            failures.push(FailureRow {
                group: p.group.clone(),
                variant: p.variant.clone(),
                code: "NoArtifacts".into(),
                reason: "job left no execution record".into(),
            });
            continue;
        };
        if let Outcome::Failed { code, reason } = &record.outcome {
            failures.push(FailureRow {
                group: p.group.clone(),
                variant: p.variant.clone(),
                code: code.clone(),
                reason: reason.clone(),
            });
        }
        for (s, t) in record.summaries.iter().zip(&record.traces) {
            runs.push(RunRow {
                group: p.group.clone(),
                variant: p.variant.clone(),
                repetition: s.repetition,
                discharge_mah: s.discharge_mah,
                energy_mwh: s.energy_mwh,
                mean_current_ma: s.mean_current_ma,
                median_current_ma: s.median_current_ma,
                duration_s: s.duration_s,
                samples: t.samples,
                lost: t.lost,
                valid: s.valid,
                digest: t.digest.clone(),
            });
        }
        let medians: Vec<f64> = record.summaries.iter().map(|s| s.median_current_ma).collect();
        let means: Vec<f64> = record.summaries.iter().map(|s| s.mean_current_ma).collect();
        let cpu: Vec<f64> = record.telemetry.iter().map(|t| t.cpu_pct).collect();
        let mem: Vec<f64> = record.telemetry.iter().map(|t| t.mem_pct).collect();
        series.push(SeriesStats {
            group: p.group.clone(),
            variant: p.variant.clone(),
            runs: record.summaries.len(),
            discharge: summarize_runs(&record.summaries).ok(),
            median_current_ma: median(&medians),
            mean_current_ma: (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64),
            device_cpu_median_pct: median(&series_values(&p, "device_cpu", 1)),
            controller_cpu_median_pct: median(&cpu),
            controller_cpu_p90_pct: quantile(&cpu, 0.9).ok(),
            controller_mem_mean_pct: (!mem.is_empty()).then(|| mem.iter().sum::<f64>() / mem.len() as f64),
            upload_bytes: record.telemetry.iter().map(|t| t.up_bytes).sum(),
        });
    }

    let mut by_variant: BTreeMap<String, BTreeMap<String, RunStats>> = BTreeMap::new();
    for s in &series {
        if let Some(d) = s.discharge {
            by_variant
                .entry(s.variant.clone())
                .or_default()
                .insert(s.group.clone(), d);
        }
    }
    let comparisons = by_variant
        .into_iter()
        .filter_map(|(v, groups)| Some((v, compare_groups(&groups).ok()?)))
        .collect();

    Report {
        scenario: scenario.map(str::to_string),
        series,
        comparisons,
        runs,
        failures,
        checks: Vec::new(),
    }
}

fn cdf_series(inputs: &[JobInput], values: impl Fn(&Parsed) -> Vec<f64>) -> Vec<(String, Vec<CdfPoint>)> {
    parse(inputs)
        .iter()
        .filter_map(|p| {
            let v = values(p);
            let cdf = empirical_cdf_capped(&v, PLOT_CDF_POINTS).ok()?;
            Some((format!("{}:{}", p.group, p.variant), cdf))
        })
        .collect()
}

fn write_cdf_file(dir: &Path, name: &str, series: &[(String, Vec<CdfPoint>)], written: &mut Vec<String>) -> io::Result<()> {
    if series.is_empty() {
        return Ok(());
    }
    let refs: Vec<(&str, &[CdfPoint])> = series.iter().map(|(n, p)| (n.as_str(), p.as_slice())).collect();
    let mut out = Vec::new();
    write_cdf_dat(&mut out, &refs)?;
    fs::write(dir.join(name), out)?;
    written.push(name.to_string());
    Ok(())
}

/// Writes `report.json` and the plot files into `dir`; returns the file
/// names written.
pub fn write_report(report: &Report, inputs: &[JobInput], dir: &Path) -> io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut json = serde_json::to_vec_pretty(report).map_err(io::Error::other)?;
    json.push(b'\n');
    fs::write(dir.join("report.json"), json)?;
    written.push("report.json".to_string());

    let variants = report.variants();
    let mut groups: Vec<&str> = report.series.iter().map(|s| s.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    if !groups.is_empty() {
        let mut t = String::from("# discharge (mAh) per group and variant\n# group");
        for v in &variants {
            t.push_str(&format!(" {v}_mean {v}_std"));
        }
        t.push('\n');
        for g in &groups {
            t.push_str(g);
            for v in &variants {
                match report.series(g, v).and_then(|s| s.discharge) {
                    Some(d) => t.push_str(&format!(" {:.6} {:.6}", d.mean, d.std)),
                    None => t.push_str(" ? ?"),
                }
            }
            t.push('\n');
        }
        fs::write(dir.join("discharge.dat"), t)?;
        written.push("discharge.dat".to_string());
    }
    for (variant, cmp) in &report.comparisons {
        let name = format!("discharge-{variant}.dat");
        let mut out = Vec::new();
        write_bars_dat(&mut out, &format!("discharge (mAh), {variant}"), cmp)?;
        fs::write(dir.join(&name), out)?;
        written.push(name);
    }

    write_cdf_file(dir, "current-cdf.dat", &cdf_series(inputs, |p| series_values(p, "cdf", 0)), &mut written)?;
    write_cdf_file(
        dir,
        "device-cpu-cdf.dat",
        &cdf_series(inputs, |p| series_values(p, "device_cpu", 1)),
        &mut written,
    )?;
    write_cdf_file(
        dir,
        "controller-cpu-cdf.dat",
        &cdf_series(inputs, |p| {
            p.record
                .as_ref()
                .map(|r| r.telemetry.iter().map(|t| t.cpu_pct).collect())
                .unwrap_or_default()
        }),
        &mut written,
    )?;
    Ok(written)
}
