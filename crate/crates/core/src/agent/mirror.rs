use super::{Agent, AgentError, ApiResult, ChannelMode, ChannelRequirements};
use crate::analysis::{latency_stats, LatencyStats};
use crate::devicesim::InputKind;
use crate::session::{FrameEvent, Session, SessionError, SessionInput, SessionState};

/// Closed sessions remembered so late callers get `SessionClosed`.
const CLOSED_SESSIONS_KEPT: usize = 64;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InjectAck {
    pub t_server: f64,
    /// When a device input takes effect.
    pub t_applied: Option<f64>,
    /// Result of a toolbar call.
    pub result: Option<ApiResult>,
}

impl Agent {
    pub fn open_session(
        &mut self,
        device_id: &str,
        toolbar_enabled: bool,
    ) -> Result<SessionState, AgentError> {
        let measuring = self.measured_device() == Some(device_id);
        let slot = self.slot(device_id)?;
        if slot.session.is_some() {
            return Err(SessionError::SessionExists(device_id.to_string()).into());
        }
        let spec = &slot.spec;
        if !spec.supports_mirroring() {
            return Err(SessionError::ChannelInfeasible(format!(
                "{device_id} cannot run the mirroring tool"
            ))
            .into());
        }
        let usable = if measuring {
            let req = ChannelRequirements {
                connectivity: slot.connectivity,
                adb_required: true,
                mirroring: true,
                device_rooted: spec.rooted,
            };
            super::measurement_channel(spec, &req).is_ok()
        } else {
            spec.supports(ChannelMode::Wifi) || spec.supports(ChannelMode::Usb)
        };
        if !usable {
            return Err(SessionError::ChannelInfeasible(format!(
                "{device_id} has no debug-bridge channel for mirroring"
            ))
            .into());
        }
        let id = self.next_session;
        self.next_session += 1;
        let session = Session::new(
            id,
            device_id,
            toolbar_enabled,
            self.config.session,
            self.clock_ns,
            self.config.seed ^ id.rotate_left(17),
        );
        let state = session.state();
        self.sessions.insert(id, session);
        let slot = self.slot_mut(device_id)?;
        slot.session = Some(id);
        slot.sim.set_mirroring(true);
        Ok(state)
    }

    pub fn close_session(&mut self, session_id: u64) -> Result<(), AgentError> {
        let s = self
            .sessions
            .get_mut(&session_id)
            .ok_or(SessionError::UnknownSession(session_id))?;
        if !s.is_open() {
            return Ok(());
        }
        s.close();
        let device = s.device_id().to_string();
        if let Some(slot) = self.slots.get_mut(&device) {
            slot.session = None;
            slot.sim.set_mirroring(false);
        }
        let closed: Vec<u64> = self
            .sessions
            .iter()
            .filter(|(_, s)| !s.is_open())
            .map(|(id, _)| *id)
            .collect();
        if closed.len() > CLOSED_SESSIONS_KEPT {
            for id in &closed[..closed.len() - CLOSED_SESSIONS_KEPT] {
                self.sessions.remove(id);
            }
        }
        Ok(())
    }

    pub fn sessions(&self) -> Vec<SessionState> {
        self.sessions.values().map(Session::state).collect()
    }

    pub fn session(&self, session_id: u64) -> Result<SessionState, AgentError> {
        Ok(self.session_ref(session_id)?.state())
    }

    fn session_ref(&self, session_id: u64) -> Result<&Session, SessionError> {
        self.sessions
            .get(&session_id)
            .ok_or(SessionError::UnknownSession(session_id))
    }

    fn session_mut(&mut self, session_id: u64) -> Result<&mut Session, SessionError> {
        self.sessions
            .get_mut(&session_id)
            .ok_or(SessionError::UnknownSession(session_id))
    }

    pub fn subscribe(&mut self, session_id: u64) -> Result<u64, AgentError> {
        let s = self.session_mut(session_id)?;
        if !s.is_open() {
            return Err(SessionError::SessionClosed.into());
        }
        Ok(s.subscribe())
    }

    pub fn unsubscribe(&mut self, session_id: u64, client: u64) {
        if let Some(s) = self.sessions.get_mut(&session_id) {
            s.unsubscribe(client);
        }
    }

    /// A frame already queued for `client`, without moving the clock.
    pub fn poll_frame(
        &mut self,
        session_id: u64,
        client: u64,
    ) -> Result<Option<FrameEvent>, AgentError> {
        Ok(self.session_mut(session_id)?.pop(client)?)
    }

    /// The next frame for `client`, advancing virtual time to the next tick
    /// when nothing is queued.
    pub fn next_frame(&mut self, session_id: u64, client: u64) -> Result<FrameEvent, AgentError> {
        loop {
            let s = self.session_mut(session_id)?;
            if let Some(ev) = s.pop(client)? {
                return Ok(ev);
            }
            let tick = s.next_tick_ns();
            self.advance_to_ns(tick);
        }
    }

    pub fn inject(
        &mut self,
        session_id: u64,
        input: SessionInput,
    ) -> Result<InjectAck, AgentError> {
        let device_id = self.session_ref(session_id)?.device_id().to_string();
        let (w, h) = {
            let cfg = self.slot(&device_id)?.sim.config();
            (cfg.screen_width, cfg.screen_height)
        };
        self.session_ref(session_id)?.check_input(&input, w, h)?;
        let t_server = self.clock();
        let ack = match &input {
            SessionInput::Device { input: kind, .. } => {
                let delay = self.session_mut(session_id)?.sample_delay();
                let slot = self.slot_mut(&device_id)?;
                let t_dev = slot.sim.clock();
                let applied = slot
                    .sim
                    .inject_input(*kind, t_dev, delay)
                    .map_err(SessionError::from)?;
                InjectAck {
                    t_server,
                    t_applied: Some(t_server + (applied - t_dev)),
                    result: None,
                }
            }
            SessionInput::Toolbar { call } => InjectAck {
                t_server,
                t_applied: None,
                result: Some(self.api_call(call.clone())?),
            },
        };
        if let Ok(s) = self.session_mut(session_id) {
            s.record_input(t_server, input);
        }
        Ok(ack)
    }

    /// Tap-and-observe cycles: each probe taps the middle of the screen and
    /// waits for the first changed frame.
    pub fn probe_latency(&mut self, session_id: u64, n: usize) -> Result<LatencyStats, AgentError> {
        let s = self.session_ref(session_id)?;
        if !s.is_open() {
            return Err(SessionError::SessionClosed.into());
        }
        if n == 0 {
            return Err(SessionError::BadProbeCount.into());
        }
        let cfg = *s.config();
        let device_id = s.device_id().to_string();
        let (w, h) = {
            let c = self.slot(&device_id)?.sim.config();
            (c.screen_width, c.screen_height)
        };
        let client = self.subscribe(session_id)?;
        let result = self.run_probes(
            session_id,
            client,
            n,
            w / 2,
            h / 2,
            cfg.probe_gap_s,
            cfg.probe_timeout_s,
        );
        self.unsubscribe(session_id, client);
        Ok(latency_stats(&result?)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_probes(
        &mut self,
        session_id: u64,
        client: u64,
        n: usize,
        x: u32,
        y: u32,
        gap_s: f64,
        timeout_s: f64,
    ) -> Result<Vec<(f64, f64)>, AgentError> {
        let mut probes = Vec::with_capacity(n);
        for _ in 0..n {
            self.advance(gap_s);
            while self.poll_frame(session_id, client)?.is_some() {}
            let t_in = self.clock();
            self.inject(
                session_id,
                SessionInput::Device {
                    input: InputKind::Tap { x, y },
                    t_client: t_in,
                },
            )?;
            loop {
                let ev = self.next_frame(session_id, client)?;
                if ev.dirty {
                    probes.push((t_in, ev.t_emitted));
                    break;
                }
                if ev.t_emitted - t_in > timeout_s {
                    return Err(SessionError::Timeout(timeout_s).into());
                }
            }
        }
        Ok(probes)
    }
}
