//! Simulated measurement hardware: the power meter, the relay circuit that
//! moves a device's voltage terminal between its battery and the meter's
//! Vout, the smart socket feeding the meter, and the controller's USB hub.
//!
//! Control operations live behind [`HardwareBackend`] so a driver for real
//! equipment can slot in later. [`SimHardware`] adds [`SimHardware::advance`],
//! which moves the virtual clock and lets the meter produce samples for the
//! device currently on Vout.

mod stream;
pub mod trace;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stream::{Gap, SampleStream, StreamConfig, StreamReader, TraceStats};
pub use trace::{PowerSample, TraceMetadata};

/// Lowest voltage the meter can source.
pub const METER_MIN_VOLTAGE: f64 = 0.8;
/// Highest voltage the meter can source.
pub const METER_MAX_VOLTAGE: f64 = 13.5;
/// Continuous current ceiling; readings above it are clamped.
pub const METER_MAX_CURRENT_MA: f64 = 6000.0;
/// Fastest supported sample rate.
pub const METER_MAX_RATE_HZ: u32 = 5000;
/// Pending-sample capacity of a stream before drop-oldest kicks in.
pub const DEFAULT_BUFFER_CAPACITY: usize = 65_536;
/// Simulated dead time while a relay channel changes over.
pub const RELAY_BREAK_MS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PowerSource {
    Battery,
    Vout,
}

impl PowerSource {
    pub fn toggled(self) -> Self {
        match self {
            PowerSource::Battery => PowerSource::Vout,
            PowerSource::Vout => PowerSource::Battery,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterState {
    pub powered: bool,
    /// `None` until a voltage has been set since the meter last powered up.
    pub voltage: Option<f64>,
    pub sampling: bool,
    pub sample_rate: u32,
}

impl Default for MeterState {
    fn default() -> Self {
        Self {
            powered: false,
            voltage: None,
            sampling: false,
            sample_rate: METER_MAX_RATE_HZ,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocketState {
    pub on: bool,
}

/// Which source each device's voltage terminal is wired to.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayBank {
    sources: BTreeMap<String, PowerSource>,
}

impl RelayBank {
    pub fn new<I, S>(devices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            sources: devices
                .into_iter()
                .map(|d| (d.into(), PowerSource::Battery))
                .collect(),
        }
    }

    pub fn source(&self, device_id: &str) -> Option<PowerSource> {
        self.sources.get(device_id).copied()
    }

    /// The device currently fed by the meter, if any.
    pub fn vout_device(&self) -> Option<&str> {
        self.sources
            .iter()
            .find(|(_, s)| **s == PowerSource::Vout)
            .map(|(d, _)| d.as_str())
    }

    pub fn vout_count(&self) -> usize {
        self.sources
            .values()
            .filter(|s| **s == PowerSource::Vout)
            .count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, PowerSource)> {
        self.sources.iter().map(|(d, s)| (d.as_str(), *s))
    }
}

/// One entry of the hardware event log, stamped with virtual time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HwEvent {
    UsbPort {
        t: f64,
        device_id: String,
        on: bool,
    },
    Socket {
        t: f64,
        on: bool,
    },
    MeterPower {
        t: f64,
        on: bool,
    },
    MeterVoltage {
        t: f64,
        voltage: f64,
    },
    Relay {
        t: f64,
        device_id: String,
        from: PowerSource,
        to: PowerSource,
        gap_ms: f64,
    },
    SamplingStarted {
        t: f64,
        rate_hz: u32,
    },
    SamplingStopped {
        t: f64,
        delivered: u64,
        lost: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum HwError {
    #[error("operation not allowed while sampling is active")]
    SamplingActive,
    #[error("voltage {0} V outside the meter range [0.8, 13.5] V")]
    VoltageOutOfRange(f64),
    #[error("socket is off")]
    SocketOff,
    #[error("meter is not powered")]
    MeterOff,
    #[error("meter voltage has not been set")]
    VoltageUnset,
    #[error("{occupied} is already on Vout")]
    RelayConflict { occupied: String },
    #[error("no device is on Vout")]
    NoLoad,
    #[error("sampling already active")]
    AlreadySampling,
    #[error("sample rate {0} Hz outside (0, 5000]")]
    BadRate(u32),
    #[error("sampling is not active")]
    NotSampling,
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("USB port of {0} is powered; it would disturb the measurement")]
    UsbActive(String),
}

/// Control surface shared by the simulator and any real-hardware driver.
pub trait HardwareBackend {
    fn socket_set(&mut self, on: bool) -> Result<SocketState, HwError>;
    fn meter_power(&mut self, on: bool) -> Result<MeterState, HwError>;
    fn meter_set_voltage(&mut self, volts: f64) -> Result<MeterState, HwError>;
    fn relay_switch(&mut self, device_id: &str, source: PowerSource) -> Result<RelayBank, HwError>;
    fn usb_port_set(&mut self, device_id: &str, on: bool) -> Result<(), HwError>;
    fn start_sampling(&mut self, config: StreamConfig) -> Result<StreamReader, HwError>;
    fn stop_sampling(&mut self) -> Result<TraceStats, HwError>;

    fn socket(&self) -> SocketState;
    fn meter(&self) -> MeterState;
    fn relays(&self) -> &RelayBank;
    fn usb_port_on(&self, device_id: &str) -> Option<bool>;
}

/// In-memory hardware with a virtual clock.
#[derive(Debug)]
pub struct SimHardware {
    clock: f64,
    socket: SocketState,
    meter: MeterState,
    relays: RelayBank,
    usb: BTreeMap<String, bool>,
    stream: Option<SampleStream>,
    events: Vec<HwEvent>,
}

impl SimHardware {
    pub fn new<I, S>(devices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = devices.into_iter().map(Into::into).collect();
        Self {
            clock: 0.0,
            socket: SocketState::default(),
            meter: MeterState::default(),
            relays: RelayBank::new(ids.iter().cloned()),
            usb: ids.into_iter().map(|d| (d, true)).collect(),
            stream: None,
            events: Vec::new(),
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn events(&self) -> &[HwEvent] {
        &self.events
    }

    pub fn drain_events(&mut self) -> Vec<HwEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn stream(&self) -> Option<&SampleStream> {
        self.stream.as_ref()
    }

    /// Advances virtual time by `dt` seconds. While sampling, the meter emits
    /// every grid sample falling inside the step with the step's mean load
    /// current (plus meter noise).
    pub fn advance(&mut self, dt: f64, load_current_ma: f64) {
        if let Some(stream) = self.stream.as_mut() {
            stream.produce(dt, load_current_ma);
        }
        self.clock += dt;
    }

    /// Drives everything to the resting state: sampling stopped, all relays
    /// on battery, meter and socket off, USB ports powered.
    pub fn force_safe_state(&mut self) {
        if self.meter.sampling {
            let _ = self.stop_sampling();
        }
        let devices: Vec<String> = self.relays.sources.keys().cloned().collect();
        for d in &devices {
            let _ = self.relay_switch(d, PowerSource::Battery);
        }
        let _ = self.socket_set(false);
        for d in &devices {
            let _ = self.usb_port_set(d, true);
        }
    }

    fn check_device(&self, device_id: &str) -> Result<(), HwError> {
        if self.relays.sources.contains_key(device_id) {
            Ok(())
        } else {
            Err(HwError::UnknownDevice(device_id.to_string()))
        }
    }
}

impl HardwareBackend for SimHardware {
    fn socket_set(&mut self, on: bool) -> Result<SocketState, HwError> {
        if !on && self.meter.sampling {
            return Err(HwError::SamplingActive);
        }
        if self.socket.on != on {
            if !on && self.meter.powered {
                self.meter_power(false)?;
            }
            self.socket.on = on;
            self.events.push(HwEvent::Socket { t: self.clock, on });
        }
        Ok(self.socket)
    }

    fn meter_power(&mut self, on: bool) -> Result<MeterState, HwError> {
        if on && !self.socket.on {
            return Err(HwError::SocketOff);
        }
        if !on && self.meter.sampling {
            return Err(HwError::SamplingActive);
        }
        if self.meter.powered != on {
            self.meter.powered = on;
            self.meter.voltage = None;
            self.events.push(HwEvent::MeterPower { t: self.clock, on });
        }
        Ok(self.meter)
    }

    fn meter_set_voltage(&mut self, volts: f64) -> Result<MeterState, HwError> {
        if !(METER_MIN_VOLTAGE..=METER_MAX_VOLTAGE).contains(&volts) {
            return Err(HwError::VoltageOutOfRange(volts));
        }
        if !self.socket.on {
            return Err(HwError::SocketOff);
        }
        if !self.meter.powered {
            return Err(HwError::MeterOff);
        }
        if self.meter.sampling {
            return Err(HwError::SamplingActive);
        }
        self.meter.voltage = Some(volts);
        self.events.push(HwEvent::MeterVoltage {
            t: self.clock,
            voltage: volts,
        });
        Ok(self.meter)
    }

    fn relay_switch(&mut self, device_id: &str, source: PowerSource) -> Result<RelayBank, HwError> {
        self.check_device(device_id)?;
        let current = self.relays.sources[device_id];
        if current == source {
            return Ok(self.relays.clone());
        }
        match source {
            PowerSource::Vout => {
                if let Some(occupied) = self.relays.vout_device() {
                    return Err(HwError::RelayConflict {
                        occupied: occupied.to_string(),
                    });
                }
                if !self.meter.powered {
                    return Err(HwError::MeterOff);
                }
                if self.meter.voltage.is_none() {
                    return Err(HwError::VoltageUnset);
                }
            }
            PowerSource::Battery => {
                if self.meter.sampling {
                    return Err(HwError::SamplingActive);
                }
            }
        }
        // break-before-make
        self.relays.sources.insert(device_id.to_string(), source);
        self.events.push(HwEvent::Relay {
            t: self.clock,
            device_id: device_id.to_string(),
            from: current,
            to: source,
            gap_ms: RELAY_BREAK_MS,
        });
        Ok(self.relays.clone())
    }

    fn usb_port_set(&mut self, device_id: &str, on: bool) -> Result<(), HwError> {
        self.check_device(device_id)?;
        if on && self.meter.sampling && self.relays.vout_device() == Some(device_id) {
            return Err(HwError::SamplingActive);
        }
        if self.usb[device_id] != on {
            self.usb.insert(device_id.to_string(), on);
            self.events.push(HwEvent::UsbPort {
                t: self.clock,
                device_id: device_id.to_string(),
                on,
            });
        }
        Ok(())
    }

    fn start_sampling(&mut self, config: StreamConfig) -> Result<StreamReader, HwError> {
        if config.rate_hz == 0 || config.rate_hz > METER_MAX_RATE_HZ {
            return Err(HwError::BadRate(config.rate_hz));
        }
        if self.meter.sampling {
            return Err(HwError::AlreadySampling);
        }
        if !self.meter.powered {
            return Err(HwError::MeterOff);
        }
        let voltage = self.meter.voltage.ok_or(HwError::VoltageUnset)?;
        let device = self
            .relays
            .vout_device()
            .ok_or(HwError::NoLoad)?
            .to_string();
        if self.usb.get(&device).copied().unwrap_or(false) {
            return Err(HwError::UsbActive(device));
        }
        let stream = SampleStream::new(config, voltage);
        let reader = stream.reader();
        self.meter.sampling = true;
        self.meter.sample_rate = config.rate_hz;
        self.events.push(HwEvent::SamplingStarted {
            t: self.clock,
            rate_hz: config.rate_hz,
        });
        self.stream = Some(stream);
        Ok(reader)
    }

    fn stop_sampling(&mut self) -> Result<TraceStats, HwError> {
        let stream = self.stream.take().ok_or(HwError::NotSampling)?;
        let stats = stream.close();
        self.meter.sampling = false;
        self.events.push(HwEvent::SamplingStopped {
            t: self.clock,
            delivered: stats.delivered,
            lost: stats.lost,
        });
        Ok(stats)
    }

    fn socket(&self) -> SocketState {
        self.socket
    }

    fn meter(&self) -> MeterState {
        self.meter
    }

    fn relays(&self) -> &RelayBank {
        &self.relays
    }

    fn usb_port_on(&self, device_id: &str) -> Option<bool> {
        self.usb.get(device_id).copied()
    }
}

#[cfg(test)]
mod tests;
