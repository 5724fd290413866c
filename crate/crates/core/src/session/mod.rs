//! Mirroring sessions: a frame clock per device, per-client bounded queues,
//! the input path with its channel delay, and a bandwidth accountant.
//!
//! The agent owns the sessions and drives them from its virtual clock; this
//! module holds the state machine and policy.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ApiCall;
use crate::devicesim::{InputKind, ScreenContent, SimError};


#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("a session is already open on {0}")]
    SessionExists(String),
    #[error("channel infeasible: {0}")]
    ChannelInfeasible(String),
    #[error("session closed")]
    SessionClosed,
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("unknown client {0}")]
    UnknownClient(u64),
    #[error("client {0} fell behind and was disconnected")]
    ClientDisconnected(u64),
    #[error("toolbar is hidden in this session")]
    ToolbarHidden,
    #[error("input outside the interactive area")]
    OutOfBounds,
    #[error("{0} is not a toolbar action")]
    NotToolbarAction(&'static str),
    #[error("no changed frame within {0} s")]
    Timeout(f64),
    #[error("n must be >= 1")]
    BadProbeCount,
    #[error(transparent)]
    Device(#[from] SimError),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::SessionExists(_) => "SessionExists",
            SessionError::ChannelInfeasible(_) => "ChannelInfeasible",
            SessionError::SessionClosed => "SessionClosed",
            SessionError::UnknownSession(_) => "UnknownSession",
            SessionError::UnknownClient(_) => "UnknownClient",
            SessionError::ClientDisconnected(_) => "ClientDisconnected",
            SessionError::ToolbarHidden => "ToolbarHidden",
            SessionError::OutOfBounds => "OutOfBounds",
            SessionError::NotToolbarAction(_) => "NotToolbarAction",
            SessionError::Timeout(_) => "Timeout",
            SessionError::BadProbeCount => "BadProbeCount",
            SessionError::Device(SimError::ScreenOff) => "ScreenOff",
            SessionError::Device(_) => "DeviceError",
        }
    }
}

/// Delay between an input reaching the agent and taking effect on the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Fixed { s: f64 },
    Normal { mean_s: f64, std_s: f64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Fixed { s: 0.05 }
    }
}

impl DelayModel {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            DelayModel::Fixed { s } => s.max(0.0),
            DelayModel::Normal { mean_s, std_s } => match Normal::new(mean_s, std_s) {
                Ok(n) => n.sample(rng).max(0.0),
                Err(_) => mean_s.max(0.0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub frame_rate: f64,
    pub client_queue_capacity: usize,
    pub bandwidth_limit_bps: f64,
    /// Encoded size of a changed frame in normal mode.
    pub delta_frame_bytes: u64,
    pub keyframe_bytes: u64,
    /// Spacing of keyframes once over the bandwidth limit.
    pub keyframe_interval_s: f64,
    pub channel_delay: DelayModel,
    pub probe_timeout_s: f64,
    /// Idle time between latency probes.
    pub probe_gap_s: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            frame_rate: 30.0,
            client_queue_capacity: 256,
            bandwidth_limit_bps: 1e6,
            delta_frame_bytes: 4000,
            keyframe_bytes: 30_000,
            keyframe_interval_s: 1.0,
            channel_delay: DelayModel::default(),
            probe_timeout_s: 10.0,
            probe_gap_s: 0.5,
        }
    }
}

impl SessionConfig {
    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }
}

fn hex_u64<S: serde::Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:016x}"))
}

fn from_hex_u64<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    let text = String::deserialize(d)?;
    u64::from_str_radix(&text, 16).map_err(serde::de::Error::custom)
}

/// One tick of the mirrored screen. The digest travels as 16 hex digits so
/// that JavaScript clients keep every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub seq: u64,
    pub t_emitted: f64,
    #[serde(serialize_with = "hex_u64", deserialize_with = "from_hex_u64")]
    pub digest: u64,
    pub dirty: bool,
    /// Encoded bytes charged for this frame.
    pub bytes: u64,
    pub keyframe_only: bool,
    pub screen: ScreenContent,
}

/// Something a console sends into a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum SessionInput {
    Device {
        #[serde(flatten)]
        input: InputKind,
        #[serde(default)]
        t_client: f64,
    },
    Toolbar {
        call: ApiCall,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputAck {
    pub t_server: f64,
    /// When the input takes effect on the device (device inputs only).
    pub t_applied: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: u64,
    pub device_id: String,
    pub toolbar_enabled: bool,
    pub clients: Vec<u64>,
    pub last_frame_seq: u64,
    pub open: bool,
}

/// Keeps a session's encoded output under the bandwidth limit by falling
/// back to periodic keyframes.
#[derive(Debug, Clone)]
pub struct BandwidthAccountant {
    limit_bytes_per_s: f64,
    window: VecDeque<(f64, u64)>,
    last_keyframe: Option<f64>,
    total_bytes: u64,
}

impl BandwidthAccountant {
    pub fn new(limit_bps: f64) -> Self {
        Self {
            limit_bytes_per_s: limit_bps / 8.0,
            window: VecDeque::new(),
            last_keyframe: None,
            total_bytes: 0,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    /// Bytes charged in the trailing one-second window ending at `t`.
    pub fn window_bytes(&mut self, t: f64) -> u64 {
        while self.window.front().is_some_and(|(s, _)| *s <= t - 1.0) {
            self.window.pop_front();
        }
        self.window.iter().map(|(_, b)| b).sum()
    }

    /// Charges one frame and returns `(bytes, keyframe_only)`.
    pub fn charge(&mut self, t: f64, dirty: bool, cfg: &SessionConfig) -> (u64, bool) {
        let used = self.window_bytes(t) as f64;
        if !dirty {
            return (0, false);
        }
        let budget = self.limit_bytes_per_s;
        let (bytes, degraded) = if used + cfg.delta_frame_bytes as f64 <= budget {
            (cfg.delta_frame_bytes, false)
        } else {
            let due = self
                .last_keyframe
                .is_none_or(|k| t - k >= cfg.keyframe_interval_s - 1e-9);
            if due && used + cfg.keyframe_bytes as f64 <= budget {
                self.last_keyframe = Some(t);
                (cfg.keyframe_bytes, true)
            } else {
                (0, true)
            }
        };
        if bytes > 0 {
            self.window.push_back((t, bytes));
            self.total_bytes += bytes;
        }
        (bytes, degraded)
    }
}

#[derive(Debug, Clone)]
struct ClientQueue {
    events: VecDeque<FrameEvent>,
    disconnected: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: u64,
    device_id: String,
    toolbar_enabled: bool,
    open: bool,
    config: SessionConfig,
    start_ns: u64,
    ticks: u64,
    last_seq: u64,
    last_digest: Option<u64>,
    clients: BTreeMap<u64, ClientQueue>,
    next_client: u64,
    rng: ChaCha8Rng,
    bandwidth: BandwidthAccountant,
    inputs: VecDeque<(f64, SessionInput)>,
}

/// Inputs remembered per session for probes and audits.
pub const INPUT_LOG_CAPACITY: usize = 4096;

impl Session {
    pub fn new(
        id: u64,
        device_id: impl Into<String>,
        toolbar_enabled: bool,
        config: SessionConfig,
        start_ns: u64,
        seed: u64,
    ) -> Self {
        Self {
            id,
            device_id: device_id.into(),
            toolbar_enabled,
            open: true,
            config,
            start_ns,
            ticks: 0,
            last_seq: 0,
            last_digest: None,
            clients: BTreeMap::new(),
            next_client: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bandwidth: BandwidthAccountant::new(config.bandwidth_limit_bps),
            inputs: VecDeque::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn toolbar_enabled(&self) -> bool {
        self.toolbar_enabled
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn uploaded_bytes(&self) -> u64 {
        self.bandwidth.total_bytes()
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            session_id: self.id,
            device_id: self.device_id.clone(),
            toolbar_enabled: self.toolbar_enabled,
            clients: self
                .clients
                .iter()
                .filter(|(_, q)| !q.disconnected)
                .map(|(id, _)| *id)
                .collect(),
            last_frame_seq: self.last_seq,
            open: self.open,
        }
    }

    /// Time of the next frame tick in nanoseconds. Ticks sit on an exact
    /// grid from the session start.
    pub fn next_tick_ns(&self) -> u64 {
        let offset = (self.ticks + 1) as f64 * 1e9 / self.config.frame_rate;
        self.start_ns + offset.round() as u64
    }

    pub fn next_tick(&self) -> f64 {
        self.next_tick_ns() as f64 / 1e9
    }

    pub fn subscribe(&mut self) -> u64 {
        let id = self.next_client;
        self.next_client += 1;
        self.clients.insert(
            id,
            ClientQueue {
                events: VecDeque::new(),
                disconnected: false,
            },
        );
        id
    }

    pub fn unsubscribe(&mut self, client: u64) {
        self.clients.remove(&client);
    }

    pub fn close(&mut self) {
        self.open = false;
        self.clients.clear();
    }

    /// Emits the frame for the tick at `next_tick()` and fans it out.
    /// Clients whose queue is full are disconnected rather than skipped.
    pub fn emit(&mut self, screen: &ScreenContent) -> FrameEvent {
        let t = self.next_tick();
        self.ticks += 1;
        let digest = screen.digest();
        let dirty = self.last_digest != Some(digest);
        self.last_digest = Some(digest);
        self.last_seq += 1;
        let (bytes, keyframe_only) = self.bandwidth.charge(t, dirty, &self.config);
        let event = FrameEvent {
            seq: self.last_seq,
            t_emitted: t,
            digest,
            dirty,
            bytes,
            keyframe_only,
            screen: screen.clone(),
        };
        let cap = self.config.client_queue_capacity;
        for q in self.clients.values_mut() {
            if q.disconnected {
                continue;
            }
            if q.events.len() >= cap {
                q.disconnected = true;
                q.events.clear();
            } else {
                q.events.push_back(event.clone());
            }
        }
        event
    }

    /// Next queued frame for `client`, if one is waiting.
    pub fn pop(&mut self, client: u64) -> Result<Option<FrameEvent>, SessionError> {
        if !self.open {
            return Err(SessionError::SessionClosed);
        }
        let q = self
            .clients
            .get_mut(&client)
            .ok_or(SessionError::UnknownClient(client))?;
        if q.disconnected {
            return Err(SessionError::ClientDisconnected(client));
        }
        Ok(q.events.pop_front())
    }

    /// Validates an input against the session policy and the screen size.
    pub fn check_input(
        &self,
        input: &SessionInput,
        width: u32,
        height: u32,
    ) -> Result<(), SessionError> {
        if !self.open {
            return Err(SessionError::SessionClosed);
        }
        match input {
            SessionInput::Device {
                input: InputKind::Tap { x, y },
                ..
            } if *x >= width || *y >= height => Err(SessionError::OutOfBounds),
            SessionInput::Device { .. } => Ok(()),
            SessionInput::Toolbar { call } => {
                if !self.toolbar_enabled {
                    Err(SessionError::ToolbarHidden)
                } else if !call.in_toolbar() {
                    Err(SessionError::NotToolbarAction(call.name()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn sample_delay(&mut self) -> f64 {
        self.config.channel_delay.sample(&mut self.rng)
    }

    pub fn record_input(&mut self, t_server: f64, input: SessionInput) {
        if self.inputs.len() >= INPUT_LOG_CAPACITY {
            self.inputs.pop_front();
        }
        self.inputs.push_back((t_server, input));
    }

    pub fn inputs(&self) -> impl Iterator<Item = &(f64, SessionInput)> {
        self.inputs.iter()
    }
}
