use std::collections::BTreeSet;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::{ChannelMode, Connectivity};
use crate::devicesim::AutomationCommand;
use crate::hwsim::{METER_MAX_RATE_HZ, METER_MAX_VOLTAGE, METER_MIN_VOLTAGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Os {
    Android,
    Ios,
}

/// Lowest Android API level the mirroring tool runs on.
pub const MIRRORING_MIN_API_LEVEL: u32 = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub device_id: String,
    pub model: String,
    pub os: Os,
    pub os_api_level: u32,
    #[serde(default)]
    pub rooted: bool,
    pub nominal_voltage: f64,
    pub supported_channels: BTreeSet<ChannelMode>,
}

impl DeviceSpec {
    /// Screen mirroring rides on the debug bridge, so it needs Android at a
    /// recent enough API level.
    pub fn supports_mirroring(&self) -> bool {
        self.os == Os::Android && self.os_api_level >= MIRRORING_MIN_API_LEVEL
    }

    /// Whether the debug bridge exists at all on this device.
    pub fn has_adb(&self) -> bool {
        self.os == Os::Android
    }

    pub fn supports(&self, channel: ChannelMode) -> bool {
        self.supported_channels.contains(&channel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterSpec {
    pub min_voltage: f64,
    pub max_voltage: f64,
    pub max_rate_hz: u32,
}

impl Default for MeterSpec {
    fn default() -> Self {
        Self {
            min_voltage: METER_MIN_VOLTAGE,
            max_voltage: METER_MAX_VOLTAGE,
            max_rate_hz: METER_MAX_RATE_HZ,
        }
    }
}

impl MeterSpec {
    pub fn accepts(&self, volts: f64) -> bool {
        volts >= self.min_voltage && volts <= self.max_voltage
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobConstraints {
    pub device_id: Option<String>,
    pub model: Option<String>,
    pub vp_id: Option<String>,
    pub connectivity: Connectivity,
    pub network_profile: Option<String>,
    pub cpu_gate_pct: Option<f64>,
}

impl JobConstraints {
    pub fn matches(&self, vp_id: &str, device: &DeviceSpec) -> bool {
        self.vp_id.as_deref().is_none_or(|v| v == vp_id)
            && self
                .device_id
                .as_deref()
                .is_none_or(|d| d == device.device_id)
            && self.model.as_deref().is_none_or(|m| m == device.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactLevel {
    /// Trace CSVs plus summaries.
    #[default]
    Full,
    Summary,
}

fn default_repetitions() -> u32 {
    1
}

fn default_voltage() -> f64 {
    3.85
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    /// Filled in from the submitting token when left empty.
    #[serde(default)]
    pub experimenter: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub constraints: JobConstraints,
    pub script: Vec<AutomationCommand>,
    /// Script is already on the device and needs no channel while measuring.
    #[serde(default)]
    pub preloaded: bool,
    pub duration_s: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub mirroring: bool,
    #[serde(default = "default_voltage")]
    pub voltage: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub artifacts: ArtifactLevel,
}

/// A manifest field that breaks an invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: &'static str,
    pub reason: String,
}

impl JobManifest {
    /// Checks everything that does not depend on the target meter.
    pub fn validate(&self) -> Result<(), FieldError> {
        let fail = |field, reason: &str| {
            Err(FieldError {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return fail("duration_s", "must be > 0");
        }
        if self.repetitions < 1 {
            return fail("repetitions", "must be >= 1");
        }
        if !self.voltage.is_finite() || self.voltage <= 0.0 {
            return fail("voltage", "must be a positive number");
        }
        if let Some(g) = self.constraints.cpu_gate_pct {
            if !(0.0..=100.0).contains(&g) {
                return fail("constraints.cpu_gate_pct", "must be within [0, 100]");
            }
        }
        for cmd in &self.script {
            match cmd {
                AutomationCommand::Wait { s } if !(*s >= 0.0) => {
                    return fail("script", "wait must be >= 0")
                }
                AutomationCommand::Scroll { count: 0, .. } => {
                    return fail("script", "scroll count must be >= 1")
                }
                AutomationCommand::PlayVideo { duration_s } if !(*duration_s >= 0.0) => {
                    return fail("script", "play_video duration must be >= 0")
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Leading `clean_state` commands run over USB before the meter is
    /// attached; the rest is the measured phase.
    pub fn split_script(&self) -> (&[AutomationCommand], &[AutomationCommand]) {
        let n = self
            .script
            .iter()
            .take_while(|c| matches!(c, AutomationCommand::CleanState { .. }))
            .count();
        self.script.split_at(n)
    }

    pub fn measured_phase_needs_adb(&self) -> bool {
        !self.preloaded
            && self
                .split_script()
                .1
                .iter()
                .any(AutomationCommand::requires_adb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn can_become(self, next: JobStatus) -> bool {
        use JobStatus::*;
        matches!(
            (self, next),
            (Queued, Running) | (Running, Done) | (Running, Failed) | (Queued, Cancelled)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobStatus::Done | JobStatus::Failed | JobStatus::Cancelled
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub vp_id: String,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFile {
    pub name: String,
    #[serde(serialize_with = "to_b64", deserialize_with = "from_b64")]
    pub bytes: Vec<u8>,
}

fn to_b64<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&STANDARD.encode(bytes))
}

fn from_b64<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
    let text = String::deserialize(d)?;
    STANDARD.decode(text).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactBundle {
    pub files: Vec<ArtifactFile>,
    /// Unix seconds; set by the coordinator when the job completes.
    #[serde(default)]
    pub retention_deadline: Option<f64>,
}

impl ArtifactBundle {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.bytes.as_slice())
    }

    pub fn push(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push(ArtifactFile {
            name: name.into(),
            bytes,
        });
    }

    pub fn total_bytes(&self) -> usize {
        self.files.iter().map(|f| f.bytes.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub manifest: JobManifest,
    pub status: JobStatus,
    pub assigned: Option<Assignment>,
    #[serde(default)]
    pub reason: Option<String>,
    pub submitted_at: f64,
    #[serde(default)]
    pub finished_at: Option<f64>,
    /// Artifacts live on disk; the record only notes whether they exist.
    #[serde(default)]
    pub has_artifacts: bool,
    #[serde(default)]
    pub retention_deadline: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VpStatus {
    Online,
    Offline,
}

/// What an administrator submits to add a vantage point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VantagePointManifest {
    pub vp_id: String,
    pub endpoint: String,
    pub allowlisted_ips: Vec<String>,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub meter: MeterSpec,
    /// Token the agent presents in HELLO.
    pub agent_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VantagePointRecord {
    pub vp_id: String,
    pub endpoint: String,
    pub allowlisted_ips: Vec<String>,
    pub devices: Vec<DeviceSpec>,
    pub meter: MeterSpec,
    pub agent_token: String,
    pub last_heartbeat: f64,
    pub status: VpStatus,
    #[serde(default)]
    pub controller_cpu_pct: Option<f64>,
    #[serde(default)]
    pub busy_devices: BTreeSet<String>,
}

/// A DNS label: lowercase letters, digits and inner hyphens, at most 63 bytes.
pub fn is_dns_label(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 63
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}
