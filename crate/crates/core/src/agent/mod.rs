//! Vantage-point controller. Owns the simulated hardware and devices, runs
//! the controller API and dispatched jobs, hosts mirroring sessions, and
//! keeps controller telemetry. Everything runs on one virtual clock kept in
//! integer nanoseconds so sample grids, frame ticks and deadlines line up
//! exactly.

mod api;
mod channel;
mod config;
mod dispatch;
mod mirror;
mod telemetry;

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

pub use api::{AgentError, ApiCall, ApiResult, TraceRef};
pub use channel::{select_channel, ChannelMode, ChannelRequirements, Connectivity};
pub use config::{reference_device, AgentConfig, ConfigError, Ports, Wiring};
pub use dispatch::{repetition_seed, ExecutionRecord, Fault, FaultPoint, JobResult, Outcome};
pub use mirror::InjectAck;
pub use telemetry::{ControllerModel, Telemetry, TelemetrySample};

use crate::analysis::Trace;
use crate::coordinator::DeviceSpec;
use crate::devicesim::{Device, NetworkProfile};
use crate::hwsim::{
    trace::write_csv, HardwareBackend, MeterState, PowerSample, PowerSource, SimHardware,
    StreamConfig, StreamReader, TraceMetadata,
};
use crate::session::Session;


pub(crate) fn to_ns(s: f64) -> u64 {
    (s * 1e9).round().max(0.0) as u64
}

/// Finished traces kept for `stop_monitor` callers.
pub const TRACE_STORE_CAPACITY: usize = 4;

#[derive(Debug)]
struct Slot {
    spec: DeviceSpec,
    sim: Device,
    job: Option<u64>,
    connectivity: Connectivity,
    session: Option<u64>,
}

#[derive(Debug)]
struct Prepared {
    device_id: String,
    token: u64,
}

#[derive(Debug)]
struct ActiveTrace {
    reader: StreamReader,
    deadline_ns: Option<u64>,
    samples: Vec<PowerSample>,
    meta: TraceMetadata,
    start_ns: u64,
    /// Next time the measured device's CPU is recorded.
    cpu_next_ns: u64,
    device_cpu: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceHealth {
    pub device_id: String,
    pub busy: bool,
    pub job_id: Option<u64>,
    pub source: PowerSource,
    pub usb_on: bool,
    pub mirroring: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub vp_id: String,
    pub t: f64,
    pub cpu_pct: f64,
    pub mem_pct: f64,
    pub net_up_bytes_per_s: f64,
    pub socket_on: bool,
    pub meter: MeterState,
    pub devices: Vec<DeviceHealth>,
}

impl HealthReport {
    pub fn busy_devices(&self) -> impl Iterator<Item = &str> {
        self.devices
            .iter()
            .filter(|d| d.busy)
            .map(|d| d.device_id.as_str())
    }
}

#[derive(Debug)]
pub struct Agent {
    config: AgentConfig,
    hw: SimHardware,
    slots: BTreeMap<String, Slot>,
    clock_ns: u64,
    prepared: Option<Prepared>,
    active: Option<ActiveTrace>,
    finished: Option<Trace>,
    /// `(t, cpu_pct)` of the measured device over the last finished trace.
    last_device_cpu: Vec<(f64, f64)>,
    traces: VecDeque<(TraceRef, Trace)>,
    next_token: u64,
    next_trace: u64,
    next_session: u64,
    sessions: BTreeMap<u64, Session>,
    uploaded_bytes: u64,
    telemetry: Telemetry,
    fault: Option<Fault>,
    consumer_stalled: bool,
}

impl Agent {
    /// Builds the agent and drives the hardware to its safe state before
    /// anything else can run.
    pub fn new(config: AgentConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut hw = SimHardware::new(config.devices.iter().map(|d| d.device_id.clone()));
        hw.force_safe_state();
        hw.drain_events();
        let slots = config
            .devices
            .iter()
            .map(|spec| {
                let slot = Slot {
                    spec: spec.clone(),
                    sim: Self::fresh_device(&config, &spec.device_id),
                    job: None,
                    connectivity: Connectivity::Wifi,
                    session: None,
                };
                (spec.device_id.clone(), slot)
            })
            .collect();
        let telemetry = Telemetry::new(config.controller, config.telemetry_period_s, config.seed);
        Ok(Self {
            hw,
            slots,
            clock_ns: 0,
            prepared: None,
            active: None,
            finished: None,
            last_device_cpu: Vec::new(),
            traces: VecDeque::new(),
            next_token: 1,
            next_trace: 1,
            next_session: 1,
            sessions: BTreeMap::new(),
            uploaded_bytes: 0,
            telemetry,
            fault: None,
            consumer_stalled: false,
            config,
        })
    }

    fn fresh_device(config: &AgentConfig, id: &str) -> Device {
        Device::new(id, config.device, config.load_model, config.apps.clone())
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn vp_id(&self) -> &str {
        &self.config.vp_id
    }

    /// Virtual time in seconds.
    pub fn clock(&self) -> f64 {
        self.clock_ns as f64 / 1e9
    }

    pub fn clock_ns(&self) -> u64 {
        self.clock_ns
    }

    pub fn hardware(&self) -> &SimHardware {
        &self.hw
    }

    pub fn device(&self, id: &str) -> Option<&Device> {
        self.slots.get(id).map(|s| &s.sim)
    }

    pub fn device_mut(&mut self, id: &str) -> Option<&mut Device> {
        self.slots.get_mut(id).map(|s| &mut s.sim)
    }

    pub fn device_spec(&self, id: &str) -> Option<&DeviceSpec> {
        self.slots.get(id).map(|s| &s.spec)
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.slots.keys().cloned().collect()
    }

    pub fn is_sampling(&self) -> bool {
        self.hw.meter().sampling
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    /// Arms a fault that fires the next time execution reaches it.
    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    /// Stops draining the meter buffer, as if the trace writer hung.
    pub fn set_consumer_stalled(&mut self, stalled: bool) {
        self.consumer_stalled = stalled;
    }

    pub fn trace(&self, trace_id: &str) -> Option<&Trace> {
        self.traces
            .iter()
            .find(|(r, _)| r.trace_id == trace_id)
            .map(|(_, t)| t)
    }

    fn slot(&self, id: &str) -> Result<&Slot, AgentError> {
        self.slots
            .get(id)
            .ok_or_else(|| AgentError::UnknownDevice(id.to_string()))
    }

    fn slot_mut(&mut self, id: &str) -> Result<&mut Slot, AgentError> {
        self.slots
            .get_mut(id)
            .ok_or_else(|| AgentError::UnknownDevice(id.to_string()))
    }

    /// Device currently under measurement (prepared or sampling).
    pub fn measured_device(&self) -> Option<&str> {
        self.prepared.as_ref().map(|p| p.device_id.as_str())
    }

    pub fn advance(&mut self, dt_s: f64) {
        self.advance_to_ns(self.clock_ns + to_ns(dt_s));
    }

    /// Runs the world up to `target_ns`: devices, meter, frame ticks,
    /// measurement deadline and telemetry.
    pub fn advance_to_ns(&mut self, target_ns: u64) {
        let step_ns = to_ns(self.config.sim_step_s).max(1);
        while self.clock_ns < target_ns {
            let mut next = (self.clock_ns + step_ns).min(target_ns);
            for s in self.sessions.values().filter(|s| s.is_open()) {
                next = next.min(s.next_tick_ns());
            }
            if let Some(d) = self.active.as_ref().and_then(|a| a.deadline_ns) {
                next = next.min(d);
            }
            let next = next.max(self.clock_ns + 1);
            self.step_world(next - self.clock_ns);
            self.clock_ns = next;
            self.record_device_cpu();
            self.emit_frames();
            if self
                .active
                .as_ref()
                .and_then(|a| a.deadline_ns)
                .is_some_and(|d| d <= self.clock_ns)
            {
                if let Ok(trace) = self.finish_active() {
                    self.finished = Some(trace);
                }
            }
            let mirroring = self.sessions.values().any(Session::is_open);
            let sampling = self.hw.meter().sampling;
            self.telemetry
                .tick(self.clock_ns, sampling, mirroring, self.uploaded_bytes);
        }
    }

    fn step_world(&mut self, dt_ns: u64) {
        let dt = dt_ns as f64 / 1e9;
        for slot in self.slots.values_mut() {
            slot.sim.step(dt);
        }
        let load = self
            .hw
            .relays()
            .vout_device()
            .and_then(|d| self.slots.get(d))
            .map_or(0.0, |s| s.sim.mean_current_ma());
        self.hw.advance(dt, load);
        if !self.consumer_stalled {
            if let Some(active) = self.active.as_mut() {
                active
                    .samples
                    .extend(active.reader.read_samples(usize::MAX));
            }
        }
    }

    fn record_device_cpu(&mut self) {
        let period = to_ns(self.config.telemetry_period_s).max(1);
        let overhead = self.config.load_model.mirror_cpu_overhead_pct;
        let Some(active) = self.active.as_mut() else {
            return;
        };
        if self.clock_ns < active.cpu_next_ns {
            return;
        }
        if let Some(slot) = self.slots.get(&active.meta.device_id) {
            let st = slot.sim.state();
            let cpu = st.cpu_pct + if st.mirroring { overhead } else { 0.0 };
            let t = (active.cpu_next_ns - active.start_ns) as f64 / 1e9;
            active.device_cpu.push((t, cpu.min(100.0)));
        }
        while active.cpu_next_ns <= self.clock_ns {
            active.cpu_next_ns += period;
        }
    }

    fn emit_frames(&mut self) {
        for s in self.sessions.values_mut().filter(|s| s.is_open()) {
            while s.next_tick_ns() <= self.clock_ns {
                let Some(slot) = self.slots.get(s.device_id()) else {
                    break;
                };
                let frame = s.emit(slot.sim.content());
                self.uploaded_bytes += frame.bytes;
            }
        }
    }

    /// Drives the measurement wiring for `device_id`: USB port off, meter
    /// socket and meter on, supply voltage, then the relay onto Vout. Returns
    /// the token that unlocks sampling.
    pub fn prepare_measurement(
        &mut self,
        device_id: &str,
        voltage: f64,
    ) -> Result<u64, AgentError> {
        self.slot(device_id)?;
        if self.hw.meter().sampling {
            return Err(AgentError::Busy("a measurement is already running".into()));
        }
        if !self.config.meter.accepts(voltage) {
            return Err(AgentError::VoltageOutOfRange(voltage));
        }
        if let Some(other) = self.hw.relays().vout_device() {
            if other != device_id {
                return Err(AgentError::RelayConflict {
                    occupied: other.to_string(),
                });
            }
        }
        if let Some(p) = &self.prepared {
            if p.device_id != device_id {
                return Err(AgentError::Busy(format!(
                    "{} is being measured",
                    p.device_id
                )));
            }
        }
        let result = self.wire_up(device_id, voltage);
        if result.is_err() {
            self.restore_device(device_id);
        }
        result
    }

    fn wire_up(&mut self, device_id: &str, voltage: f64) -> Result<u64, AgentError> {
        self.hw.usb_port_set(device_id, false)?;
        let cold = !self.hw.meter().powered;
        self.hw.socket_set(true)?;
        self.hw.meter_power(true)?;
        self.hw.meter_set_voltage(voltage)?;
        if cold && self.config.settle_delay_s > 0.0 {
            self.advance(self.config.settle_delay_s);
        }
        self.hw.relay_switch(device_id, PowerSource::Vout)?;
        if self.config.wiring == Wiring::Direct {
            if let Some(slot) = self.slots.get_mut(device_id) {
                slot.sim.log_event("meter hard-wired to battery terminal");
            }
        }
        let token = self.next_token;
        self.next_token += 1;
        self.prepared = Some(Prepared {
            device_id: device_id.to_string(),
            token,
        });
        Ok(token)
    }

    /// Starts the meter stream for a prepared measurement. With `duration_s`
    /// the stream stops by itself at the deadline.
    pub fn start_sampling(
        &mut self,
        token: u64,
        duration_s: Option<f64>,
        job_id: Option<u64>,
        repetition: u32,
        seed: u64,
    ) -> Result<(), AgentError> {
        let device_id = match &self.prepared {
            Some(p) if p.token == token => p.device_id.clone(),
            _ => return Err(AgentError::BadToken),
        };
        if self.hw.meter().sampling || self.active.is_some() {
            return Err(AgentError::Busy("a measurement is already running".into()));
        }
        let rate = self.config.sample_rate_hz;
        let reader = self.hw.start_sampling(StreamConfig {
            rate_hz: rate,
            capacity: self.config.buffer_capacity,
            noise_sigma_ma: self.config.load_model.noise_sigma_ma,
            seed,
        })?;
        self.finished = None;
        let voltage = self.hw.meter().voltage.unwrap_or_default();
        self.active = Some(ActiveTrace {
            reader,
            deadline_ns: duration_s.map(|d| self.clock_ns + to_ns(d)),
            samples: Vec::new(),
            start_ns: self.clock_ns,
            cpu_next_ns: self.clock_ns + to_ns(self.config.telemetry_period_s).max(1),
            device_cpu: Vec::new(),
            meta: TraceMetadata {
                device_id,
                job_id,
                repetition,
                rate_hz: rate,
                voltage_v: voltage,
                seed,
                ..TraceMetadata::default()
            },
        });
        Ok(())
    }

    fn finish_active(&mut self) -> Result<Trace, AgentError> {
        let stats = self.hw.stop_sampling()?;
        let mut active = self.active.take().ok_or(AgentError::NotSampling)?;
        active
            .samples
            .extend(active.reader.read_samples(usize::MAX));
        active.meta.delivered = stats.delivered;
        active.meta.lost = stats.lost;
        active.meta.gaps = stats.gaps;
        active.meta.clamped = stats.clamped;
        self.last_device_cpu = active.device_cpu;
        Ok(Trace::new(active.meta, active.samples))
    }

    /// Ends sampling (or collects a stream that hit its deadline) and keeps
    /// the trace for later retrieval.
    pub fn stop_monitor(&mut self) -> Result<TraceRef, AgentError> {
        let trace = self.take_trace()?;
        let r = self.trace_ref(&trace);
        if self.traces.len() >= TRACE_STORE_CAPACITY {
            self.traces.pop_front();
        }
        self.traces.push_back((r.clone(), trace));
        Ok(r)
    }

    fn take_trace(&mut self) -> Result<Trace, AgentError> {
        if self.active.is_some() {
            self.finish_active()
        } else {
            self.finished.take().ok_or(AgentError::NotSampling)
        }
    }

    fn trace_ref(&mut self, trace: &Trace) -> TraceRef {
        let id = self.next_trace;
        self.next_trace += 1;
        TraceRef {
            trace_id: format!("{}-{}-{id}", self.config.vp_id, trace.meta.device_id),
            device_id: trace.meta.device_id.clone(),
            repetition: trace.meta.repetition,
            samples: trace.meta.delivered,
            lost: trace.meta.lost,
            duration_s: trace.duration_s(),
            digest: trace_digest(&trace.samples),
        }
    }

    /// Undoes [`Agent::prepare_measurement`]: relay back to battery, meter
    /// socket off, USB port on. Safe to call on a device already at rest.
    pub fn finalize_measurement(&mut self, device_id: &str) -> Result<(), AgentError> {
        self.slot(device_id)?;
        if self.hw.meter().sampling {
            return Err(AgentError::SamplingActive);
        }
        self.hw.relay_switch(device_id, PowerSource::Battery)?;
        if self.hw.relays().vout_device().is_none() {
            self.hw.socket_set(false)?;
        }
        self.hw.usb_port_set(device_id, true)?;
        if self
            .prepared
            .as_ref()
            .is_some_and(|p| p.device_id == device_id)
        {
            self.prepared = None;
        }
        Ok(())
    }

    /// Best-effort return to the safe state for one device, used on error
    /// paths: sampling stopped, relay on battery, meter off, USB on.
    fn restore_device(&mut self, device_id: &str) {
        if self.hw.meter().sampling {
            let _ = self.finish_active();
        }
        self.active = None;
        let _ = self.hw.relay_switch(device_id, PowerSource::Battery);
        if self.hw.relays().vout_device().is_none() {
            let _ = self.hw.socket_set(false);
        }
        let _ = self.hw.usb_port_set(device_id, true);
        if self
            .prepared
            .as_ref()
            .is_some_and(|p| p.device_id == device_id)
        {
            self.prepared = None;
        }
    }

    /// Drives all hardware to rest. Also the startup path.
    pub fn force_safe_state(&mut self) {
        if self.hw.meter().sampling {
            let _ = self.finish_active();
        }
        self.active = None;
        self.prepared = None;
        self.hw.force_safe_state();
    }

    /// Replaces the device simulator with a freshly booted one.
    fn reboot_device(
        &mut self,
        device_id: &str,
        seed: u64,
        network: NetworkProfile,
    ) -> Result<(), AgentError> {
        let fresh = Self::fresh_device(&self.config, device_id);
        let slot = self.slot_mut(device_id)?;
        slot.sim = fresh;
        slot.sim.reseed(seed);
        slot.sim.set_network(network);
        slot.sim.set_mirroring(slot.session.is_some());
        Ok(())
    }

    pub fn healthcheck(&self) -> HealthReport {
        let latest = self.telemetry.latest().copied();
        let model = self.config.controller;
        let period = self.telemetry.period_ns() as f64 / 1e9;
        HealthReport {
            vp_id: self.config.vp_id.clone(),
            t: self.clock(),
            cpu_pct: latest.map_or(model.idle_cpu_pct, |s| s.cpu_pct),
            mem_pct: latest.map_or(model.idle_mem_pct, |s| s.mem_pct),
            net_up_bytes_per_s: latest.map_or(0.0, |s| s.up_bytes as f64 / period),
            socket_on: self.hw.socket().on,
            meter: self.hw.meter(),
            devices: self
                .slots
                .iter()
                .map(|(id, slot)| DeviceHealth {
                    device_id: id.clone(),
                    busy: slot.job.is_some() || self.measured_device() == Some(id.as_str()),
                    job_id: slot.job,
                    source: self.hw.relays().source(id).unwrap_or(PowerSource::Battery),
                    usb_on: self.hw.usb_port_on(id).unwrap_or(false),
                    mirroring: slot.sim.state().mirroring,
                })
                .collect(),
        }
    }

    /// Picks the channel for a one-off command.
    fn command_channel(&self, device_id: &str, needs_adb: bool) -> Result<ChannelMode, AgentError> {
        let slot = self.slot(device_id)?;
        let spec = &slot.spec;
        if needs_adb && !spec.has_adb() {
            return Err(AgentError::ChannelInfeasible(format!(
                "{device_id} has no debug bridge"
            )));
        }
        if self.measured_device() == Some(device_id) {
            let req = ChannelRequirements {
                connectivity: slot.connectivity,
                adb_required: needs_adb,
                mirroring: slot.session.is_some(),
                device_rooted: spec.rooted,
            };
            return measurement_channel(spec, &req);
        }
        let usb_up = self.hw.usb_port_on(device_id).unwrap_or(false);
        [ChannelMode::Usb, ChannelMode::Wifi, ChannelMode::Bluetooth]
            .into_iter()
            .find(|c| {
                spec.supports(*c)
                    && match c {
                        ChannelMode::Usb => usb_up,
                        ChannelMode::Wifi => true,
                        ChannelMode::Bluetooth => !needs_adb || spec.rooted,
                    }
            })
            .ok_or_else(|| {
                AgentError::ChannelInfeasible(format!("no usable channel to {device_id}"))
            })
    }

    pub fn api_call(&mut self, call: ApiCall) -> Result<ApiResult, AgentError> {
        match call {
            ApiCall::ListDevices => Ok(ApiResult::Devices {
                device_ids: self.device_ids(),
            }),
            ApiCall::DeviceMirroring { device_id } => {
                let open = self.slot(&device_id)?.session;
                match open {
                    Some(id) => {
                        self.close_session(id)?;
                        Ok(ApiResult::Mirroring {
                            device_id,
                            active: false,
                            session_id: None,
                        })
                    }
                    None => {
                        let s = self.open_session(&device_id, true)?;
                        Ok(ApiResult::Mirroring {
                            device_id,
                            active: true,
                            session_id: Some(s.session_id),
                        })
                    }
                }
            }
            ApiCall::PowerMonitor => {
                if self.hw.meter().powered {
                    if self.hw.meter().sampling {
                        return Err(AgentError::SamplingActive);
                    }
                    if let Some(d) = self.hw.relays().vout_device().map(str::to_string) {
                        self.hw.relay_switch(&d, PowerSource::Battery)?;
                    }
                    self.hw.socket_set(false)?;
                    self.prepared = None;
                } else {
                    self.hw.socket_set(true)?;
                    self.hw.meter_power(true)?;
                }
                Ok(ApiResult::PowerMonitor {
                    meter: self.hw.meter(),
                })
            }
            ApiCall::SetVoltage { voltage } => {
                if !self.config.meter.accepts(voltage) {
                    return Err(AgentError::VoltageOutOfRange(voltage));
                }
                let meter = self.hw.meter_set_voltage(voltage)?;
                Ok(ApiResult::Voltage { meter })
            }
            ApiCall::StartMonitor {
                device_id,
                duration_s,
            } => {
                let spec = self.slot(&device_id)?.spec.clone();
                if !(duration_s > 0.0) {
                    return Err(AgentError::InvalidManifest {
                        field: "duration_s".into(),
                        reason: "must be > 0".into(),
                    });
                }
                if self.hw.meter().sampling {
                    return Err(AgentError::Busy("a measurement is already running".into()));
                }
                if self.slot(&device_id)?.job.is_some() {
                    return Err(AgentError::Busy(format!("{device_id} is running a job")));
                }
                let meter = self.hw.meter();
                if !meter.powered {
                    return Err(AgentError::MeterOff);
                }
                let voltage = meter.voltage.unwrap_or(spec.nominal_voltage);
                let token = self.prepare_measurement(&device_id, voltage)?;
                let seed = self.config.seed ^ token;
                if let Err(e) = self.start_sampling(token, Some(duration_s), None, 0, seed) {
                    self.restore_device(&device_id);
                    return Err(e);
                }
                Ok(ApiResult::Monitoring {
                    device_id,
                    token,
                    duration_s,
                })
            }
            ApiCall::StopMonitor => Ok(ApiResult::Trace {
                trace: self.stop_monitor()?,
            }),
            ApiCall::BattSwitch { device_id } => {
                self.slot(&device_id)?;
                let current = self
                    .hw
                    .relays()
                    .source(&device_id)
                    .unwrap_or(PowerSource::Battery);
                let target = current.toggled();
                self.hw.relay_switch(&device_id, target)?;
                Ok(ApiResult::Relay {
                    device_id,
                    source: target,
                })
            }
            ApiCall::ExecuteAdb { device_id, command } => {
                let channel = self.command_channel(&device_id, command.requires_adb())?;
                self.slot_mut(&device_id)?.sim.apply_command(&command)?;
                Ok(ApiResult::Executed { device_id, channel })
            }
        }
    }
}

/// Channel for the measured phase, given what the device supports. WiFi is
/// preferred; a device without WiFi falls back to Bluetooth when allowed.
pub(crate) fn measurement_channel(
    spec: &DeviceSpec,
    req: &ChannelRequirements,
) -> Result<ChannelMode, AgentError> {
    let picked = select_channel(req).map_err(AgentError::ChannelInfeasible)?;
    if spec.supports(picked) {
        return Ok(picked);
    }
    let mut fallback = *req;
    fallback.connectivity = Connectivity::Cellular;
    match select_channel(&fallback) {
        Ok(c) if spec.supports(c) => Ok(c),
        _ => Err(AgentError::ChannelInfeasible(format!(
            "{} supports none of the feasible channels",
            spec.device_id
        ))),
    }
}

struct Fnv(u64);

impl Write for Fnv {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        for b in buf {
            self.0 = (self.0 ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// FNV-1a over the CSV rendering of `samples`.
pub fn trace_digest(samples: &[PowerSample]) -> String {
    let mut h = Fnv(0xcbf2_9ce4_8422_2325);
    write_csv(&mut h, samples).expect("hashing cannot fail");
    format!("{:016x}", h.0)
}
