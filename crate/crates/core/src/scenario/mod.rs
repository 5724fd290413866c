//! Declarative experiment suites. A scenario crosses a base manifest with
//! named groups (usually apps) and variants (mirroring, wiring, location),
//! runs the resulting jobs and checks the report against expectations.
//!
//! Seeds live in the group entries, so every variant of a group replays the
//! same random draws and differences between variants come from the variant
//! alone.

mod check;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, ConfigError, Wiring};
use crate::coordinator::JobManifest;

pub use check::{evaluate, Check, CheckResult};
pub use report::{build_report, split_label, write_report, FailureRow, JobInput, Report, RunRow, SeriesStats};

#[cfg(test)]
mod tests;

const BUILTIN: [(&str, &str); 3] = [
    ("accuracy-fig1", include_str!("../../../../scenarios/accuracy-fig1.json")),
    ("browsers-fig2", include_str!("../../../../scenarios/browsers-fig2.json")),
    ("locations-fig6", include_str!("../../../../scenarios/locations-fig6.json")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("job {label}: invalid {field}: {reason}")]
    Invalid {
        label: String,
        field: String,
        reason: String,
    },
    #[error("job {0}: no configured device matches")]
    NoDevice(String),
    #[error("unknown scenario {0}")]
    Unknown(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Overrides contributed by one group or variant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cell {
    /// Merged into the manifest, objects recursively.
    pub manifest: Value,
    /// Meter wiring the job needs. Only a local run can honour this; a
    /// fleet has whatever wiring its vantage points were built with.
    pub wiring: Option<Wiring>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub base: Value,
    pub groups: BTreeMap<String, Cell>,
    pub variants: BTreeMap<String, Cell>,
    #[serde(default)]
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioJob {
    pub group: String,
    pub variant: String,
    pub manifest: JobManifest,
    pub wiring: Option<Wiring>,
}

impl ScenarioJob {
    pub fn label(&self) -> String {
        format!("{}:{}", self.group, self.variant)
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
        Self::from_json(text)
    }

    /// Every group × variant job, group-major in name order. Each manifest
    /// is labelled `group:variant`.
    pub fn jobs(&self) -> Result<Vec<ScenarioJob>, ScenarioError> {
        let mut jobs = Vec::new();
        for (group, g) in &self.groups {
            for (variant, v) in &self.variants {
                let label = format!("{group}:{variant}");
                let mut doc = self.base.clone();
                merge(&mut doc, &g.manifest);
                merge(&mut doc, &v.manifest);
                if let Value::Object(map) = &mut doc {
                    map.insert("label".into(), Value::String(label.clone()));
                    map.entry("experimenter").or_insert(Value::String(String::new()));
                }
                let manifest: JobManifest = serde_json::from_value(doc).map_err(|e| ScenarioError::Invalid {
                    label: label.clone(),
                    field: "manifest".into(),
                    reason: e.to_string(),
                })?;
                manifest.validate().map_err(|e| ScenarioError::Invalid {
                    label: label.clone(),
                    field: e.field.into(),
                    reason: e.reason,
                })?;
                jobs.push(ScenarioJob {
                    group: group.clone(),
                    variant: variant.clone(),
                    manifest,
                    wiring: v.wiring.or(g.wiring),
                });
            }
        }
        Ok(jobs)
    }
}

fn merge(into: &mut Value, patch: &Value) {
    match (into, patch) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (slot, v) => *slot = v.clone(),
    }
}

/// Runs every job of `scenario` in-process on simulated vantage points
/// built from `config`, one per wiring.
pub fn run_local(scenario: &Scenario, config: &AgentConfig) -> Result<Vec<JobInput>, ScenarioError> {
    let mut agents: Vec<(Wiring, Agent)> = Vec::new();
    let mut out = Vec::new();
    for (i, job) in scenario.jobs()?.into_iter().enumerate() {
        let wiring = job.wiring.unwrap_or(config.wiring);
        let idx = match agents.iter().position(|(w, _)| *w == wiring) {
            Some(idx) => idx,
            None => {
                let agent = Agent::new(AgentConfig {
                    wiring,
                    ..config.clone()
                })?;
                agents.push((wiring, agent));
                agents.len() - 1
            }
        };
        let agent = &mut agents[idx].1;
        let c = &job.manifest.constraints;
        let device = config
            .devices
            .iter()
            .find(|d| c.matches(&config.vp_id, d))
            .ok_or_else(|| ScenarioError::NoDevice(job.label()))?;
        tracing::info!(scenario = %scenario.name, job = %job.label(), "running");
        let result = agent.handle_dispatch(i as u64 + 1, &job.manifest, &device.device_id);
        out.push(JobInput {
            label: job.label(),
            bundle: result.bundle,
        });
    }
    Ok(out)
}

/// Runs a scenario locally and evaluates its checks.
pub fn run_and_report(scenario: &Scenario, config: &AgentConfig) -> Result<(Report, Vec<JobInput>), ScenarioError> {
    let inputs = run_local(scenario, config)?;
    let mut report = build_report(Some(&scenario.name), &inputs);
    report.checks = evaluate(&scenario.checks, &report);
    Ok((report, inputs))
}
