use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::telemetry::ControllerModel;
use super::ChannelMode;
use crate::coordinator::{DeviceSpec, MeterSpec, Os};
use crate::devicesim::{AppProfile, DeviceConfig, LoadModel, NetworkProfile};
use crate::hwsim::{DEFAULT_BUFFER_CAPACITY, METER_MAX_RATE_HZ};
use crate::session::SessionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ports {
    /// Coordinator channel.
    pub control: u16,
    /// Session HTTP backend.
    pub session_http: u16,
    /// Console frame stream.
    pub console_stream: u16,
}

impl Default for Ports {
    fn default() -> Self {
        Self {
            control: 2222,
            session_http: 8080,
            console_stream: 6081,
        }
    }
}

/// How the meter reaches the device: through the relay bank or hard-wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    #[default]
    Relay,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub vp_id: String,
    /// `host:port` of the coordinator's agent listener.
    pub coordinator: Option<String>,
    pub token: Option<String>,
    /// Bearer tokens accepted by the session endpoints.
    pub session_tokens: Vec<String>,
    pub ports: Ports,
    pub seed: u64,
    /// Longest virtual-clock step.
    pub sim_step_s: f64,
    pub sample_rate_hz: u32,
    pub buffer_capacity: usize,
    /// Wait after powering the meter before the device is switched over.
    pub settle_delay_s: f64,
    pub telemetry_period_s: f64,
    pub heartbeat_interval_s: f64,
    /// Idle time before each repetition so leftovers from setup fade out.
    pub pre_roll_s: f64,
    pub wiring: Wiring,
    pub trace_dir: Option<PathBuf>,
    pub load_model: LoadModel,
    pub device: DeviceConfig,
    pub session: SessionConfig,
    pub controller: ControllerModel,
    pub meter: MeterSpec,
    pub devices: Vec<DeviceSpec>,
    pub apps: Vec<AppProfile>,
    pub network_profiles: Vec<NetworkProfile>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            vp_id: "node1".into(),
            coordinator: None,
            token: None,
            session_tokens: Vec::new(),
            ports: Ports::default(),
            seed: 0,
            sim_step_s: 0.01,
            sample_rate_hz: METER_MAX_RATE_HZ,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            settle_delay_s: 1.0,
            telemetry_period_s: 1.0,
            heartbeat_interval_s: 10.0,
            pre_roll_s: 5.0,
            wiring: Wiring::Relay,
            trace_dir: None,
            load_model: LoadModel::default(),
            device: DeviceConfig::default(),
            session: SessionConfig::default(),
            controller: ControllerModel::default(),
            meter: MeterSpec::default(),
            devices: Vec::new(),
            apps: AppProfile::defaults(),
            network_profiles: NetworkProfile::vpn_locations(),
        }
    }
}

/// The handset used by the calibration: an unrooted Android phone reachable
/// over USB, WiFi and Bluetooth.
pub fn reference_device() -> DeviceSpec {
    DeviceSpec {
        device_id: "j7duo".into(),
        model: "SM-J720F".into(),
        os: Os::Android,
        os_api_level: 26,
        rooted: false,
        nominal_voltage: 3.85,
        supported_channels: [ChannelMode::Usb, ChannelMode::Wifi, ChannelMode::Bluetooth]
            .into_iter()
            .collect(),
    }
}

impl AgentConfig {
    /// Default calibration with the reference handset attached.
    pub fn reference() -> Self {
        Self {
            devices: vec![reference_device()],
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: AgentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !crate::coordinator::is_dns_label(&self.vp_id) {
            return bad(format!("vp_id {:?} is not a DNS label", self.vp_id));
        }
        if !(self.sim_step_s > 0.0) {
            return bad("sim_step_s must be > 0".into());
        }
        if self.sample_rate_hz == 0 || self.sample_rate_hz > self.meter.max_rate_hz {
            return bad(format!(
                "sample_rate_hz {} out of range",
                self.sample_rate_hz
            ));
        }
        if !(self.settle_delay_s >= 0.0) || !(self.pre_roll_s >= 0.0) {
            return bad("delays must be >= 0".into());
        }
        if !(self.telemetry_period_s > 0.0) || !(self.heartbeat_interval_s > 0.0) {
            return bad("periods must be > 0".into());
        }
        if !(self.session.frame_rate > 0.0) {
            return bad("session.frame_rate must be > 0".into());
        }
        self.load_model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for a in &self.apps {
            a.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        for p in &self.network_profiles {
            p.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.devices {
            if !seen.insert(&d.device_id) {
                return bad(format!("duplicate device {}", d.device_id));
            }
            if !self.meter.accepts(d.nominal_voltage) {
                return bad(format!(
                    "{}: nominal voltage outside meter range",
                    d.device_id
                ));
            }
        }
        Ok(())
    }

    pub fn network_profile(&self, name: &str) -> Option<&NetworkProfile> {
        self.network_profiles.iter().find(|p| p.name == name)
    }
}
