use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ChannelMode;
use crate::analysis::AnalysisError;
use crate::devicesim::{AutomationCommand, SimError};
use crate::hwsim::{HwError, MeterState, PowerSource};
use crate::session::SessionError;

/// The controller API. The console toolbar exposes every call except
/// `execute_adb`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "call", rename_all = "snake_case")]
pub enum ApiCall {
    ListDevices,
    DeviceMirroring {
        device_id: String,
    },
    PowerMonitor,
    SetVoltage {
        voltage: f64,
    },
    StartMonitor {
        device_id: String,
        duration_s: f64,
    },
    StopMonitor,
    BattSwitch {
        device_id: String,
    },
    ExecuteAdb {
        device_id: String,
        command: AutomationCommand,
    },
}

impl ApiCall {
    pub fn name(&self) -> &'static str {
        match self {
            ApiCall::ListDevices => "list_devices",
            ApiCall::DeviceMirroring { .. } => "device_mirroring",
            ApiCall::PowerMonitor => "power_monitor",
            ApiCall::SetVoltage { .. } => "set_voltage",
            ApiCall::StartMonitor { .. } => "start_monitor",
            ApiCall::StopMonitor => "stop_monitor",
            ApiCall::BattSwitch { .. } => "batt_switch",
            ApiCall::ExecuteAdb { .. } => "execute_adb",
        }
    }

    pub fn in_toolbar(&self) -> bool {
        !matches!(self, ApiCall::ExecuteAdb { .. })
    }
}

/// Reference to a finished trace held by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRef {
    pub trace_id: String,
    pub device_id: String,
    pub repetition: u32,
    pub samples: u64,
    pub lost: u64,
    pub duration_s: f64,
    /// FNV-1a of the trace CSV, so traces can be compared without shipping them.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ApiResult {
    Devices {
        device_ids: Vec<String>,
    },
    Mirroring {
        device_id: String,
        active: bool,
        session_id: Option<u64>,
    },
    PowerMonitor {
        meter: MeterState,
    },
    Voltage {
        meter: MeterState,
    },
    Monitoring {
        device_id: String,
        token: u64,
        duration_s: f64,
    },
    Trace {
        trace: TraceRef,
    },
    Relay {
        device_id: String,
        source: PowerSource,
    },
    Executed {
        device_id: String,
        channel: ChannelMode,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("meter is off")]
    MeterOff,
    #[error("busy: {0}")]
    Busy(String),
    #[error("channel infeasible: {0}")]
    ChannelInfeasible(String),
    #[error("voltage {0} V outside the meter range")]
    VoltageOutOfRange(f64),
    #[error("{occupied} is already on Vout")]
    RelayConflict { occupied: String },
    #[error("sampling is active")]
    SamplingActive,
    #[error("not sampling")]
    NotSampling,
    #[error("no matching prepared measurement")]
    BadToken,
    #[error("unknown network profile {0}")]
    UnknownProfile(String),
    #[error("invalid manifest field {field}: {reason}")]
    InvalidManifest { field: String, reason: String },
    #[error("hardware: {0}")]
    Hardware(HwError),
    #[error("device: {0}")]
    Device(#[from] SimError),
    #[error("session: {0}")]
    Session(#[from] SessionError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("injected fault at {0}")]
    Fault(String),
}

impl From<HwError> for AgentError {
    fn from(e: HwError) -> Self {
        match e {
            HwError::VoltageOutOfRange(v) => AgentError::VoltageOutOfRange(v),
            HwError::RelayConflict { occupied } => AgentError::RelayConflict { occupied },
            HwError::SamplingActive => AgentError::SamplingActive,
            HwError::NotSampling => AgentError::NotSampling,
            HwError::MeterOff | HwError::SocketOff => AgentError::MeterOff,
            HwError::UnknownDevice(d) => AgentError::UnknownDevice(d),
            other => AgentError::Hardware(other),
        }
    }
}

impl AgentError {
    /// Stable identifier shown to clients.
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::UnknownDevice(_) => "UnknownDevice",
            AgentError::MeterOff => "MeterOff",
            AgentError::Busy(_) => "Busy",
            AgentError::ChannelInfeasible(_) => "ChannelInfeasible",
            AgentError::VoltageOutOfRange(_) => "VoltageOutOfRange",
            AgentError::RelayConflict { .. } => "RelayConflict",
            AgentError::SamplingActive => "SamplingActive",
            AgentError::NotSampling => "NotSampling",
            AgentError::BadToken => "BadToken",
            AgentError::UnknownProfile(_) => "UnknownProfile",
            AgentError::InvalidManifest { .. } => "InvalidManifest",
            AgentError::Hardware(_) => "HardwareError",
            AgentError::Device(SimError::UnknownApp(_)) => "UnknownApp",
            AgentError::Device(SimError::InvalidInState(_)) => "InvalidInState",
            AgentError::Device(SimError::ScreenOff) => "ScreenOff",
            AgentError::Device(_) => "InvalidCommand",
            AgentError::Session(e) => e.code(),
            AgentError::Analysis(_) => "AnalysisError",
            AgentError::Fault(_) => "InjectedFault",
        }
    }
}
