use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    app_page_load_time, AppKind, AppProfile, AutomationCommand, InputKind, LoadModel,
    NetworkProfile, ScrollDirection, SimError, DEFAULT_PAGE_LOAD_CAP_S, KEYCODE_POWER,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub screen_width: u32,
    pub screen_height: u32,
    /// CPU on the home screen with nothing running.
    pub idle_cpu_pct: f64,
    /// Time constant of the interaction bump decay.
    pub cpu_decay_tau_s: f64,
    pub page_load_cap_s: f64,
    /// Rate at which playing video and rendering pages change the screen.
    pub content_fps: f64,
    pub scroll_spacing_s: f64,
    pub setup_step_spacing_s: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            screen_width: 1080,
            screen_height: 1920,
            idle_cpu_pct: 1.0,
            cpu_decay_tau_s: 2.0,
            page_load_cap_s: DEFAULT_PAGE_LOAD_CAP_S,
            content_fps: 60.0,
            scroll_spacing_s: 0.25,
            setup_step_spacing_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    Input { input: InputKind },
    SetupStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEffect {
    pub at: f64,
    #[serde(flatten)]
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    /// `None` is the home screen.
    pub current_app: Option<String>,
    /// Mean CPU over the last step, without the mirroring overhead.
    pub cpu_pct: f64,
    pub screen_on: bool,
    pub mirroring: bool,
    pub frame_seq: u64,
    pub pending_actions: Vec<TimedEffect>,
    pub network: NetworkProfile,
}

/// Declarative description of what is on screen; its digest is what the
/// mirroring session streams.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScreenContent {
    pub app: Option<String>,
    pub screen_on: bool,
    pub page: u64,
    pub render_ticks: u64,
    pub scroll_offset: i64,
    pub ui_counter: u64,
    pub video_ticks: u64,
    pub setup_remaining: u32,
}

impl ScreenContent {
    /// 64-bit FNV-1a over the canonical JSON encoding.
    pub fn digest(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("screen content serializes");
        bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceLogEntry {
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone, Copy)]
struct Activity {
    start: f64,
    end: f64,
    /// CPU points added while active (zero for video, whose cost is the app median).
    cpu_pct: f64,
}

impl Activity {
    fn overlap(&self, a: f64, b: f64) -> f64 {
        (self.end.min(b) - self.start.max(a)).max(0.0)
    }

    fn ticks(&self, t: f64, fps: f64) -> u64 {
        let shown = (t.min(self.end) - self.start).max(0.0);
        (shown * fps + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone)]
pub struct Device {
    id: String,
    config: DeviceConfig,
    model: LoadModel,
    apps: BTreeMap<String, AppProfile>,
    state: DeviceState,
    clock: f64,
    bump: f64,
    loads: Vec<Activity>,
    video: Option<Activity>,
    fresh: BTreeSet<String>,
    content: ScreenContent,
    rng: ChaCha8Rng,
    log: Vec<DeviceLogEntry>,
}

impl Device {
    pub fn new(
        id: impl Into<String>,
        config: DeviceConfig,
        model: LoadModel,
        apps: impl IntoIterator<Item = AppProfile>,
    ) -> Self {
        let apps: BTreeMap<String, AppProfile> =
            apps.into_iter().map(|a| (a.id.clone(), a)).collect();
        let fresh = apps.keys().cloned().collect();
        let mut device = Self {
            id: id.into(),
            config,
            model,
            apps,
            state: DeviceState {
                current_app: None,
                cpu_pct: 0.0,
                screen_on: true,
                mirroring: false,
                frame_seq: 0,
                pending_actions: Vec::new(),
                network: NetworkProfile::default(),
            },
            clock: 0.0,
            bump: 0.0,
            loads: Vec::new(),
            video: None,
            fresh,
            content: ScreenContent {
                screen_on: true,
                ..ScreenContent::default()
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            log: Vec::new(),
        };
        device.state.cpu_pct = device.target_cpu();
        device
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn model(&self) -> &LoadModel {
        &self.model
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn apps(&self) -> impl Iterator<Item = &AppProfile> {
        self.apps.values()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn content(&self) -> &ScreenContent {
        &self.content
    }

    pub fn frame_digest(&self) -> u64 {
        self.content.digest()
    }

    pub fn log(&self) -> &[DeviceLogEntry] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<DeviceLogEntry> {
        std::mem::take(&mut self.log)
    }

    pub fn log_event(&mut self, message: impl Into<String>) {
        self.log.push(DeviceLogEntry {
            t: self.clock,
            message: message.into(),
        });
    }

    /// Reseeds the per-run randomness (page size variation).
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_network(&mut self, profile: NetworkProfile) {
        self.state.network = profile;
    }

    pub fn set_mirroring(&mut self, on: bool) {
        self.state.mirroring = on;
    }

    pub fn is_video_playing(&self) -> bool {
        self.video.is_some_and(|v| v.end > self.clock)
    }

    pub fn mean_current_ma(&self) -> f64 {
        self.model.mean_current_ma(&self.state)
    }

    fn target_cpu(&self) -> f64 {
        if !self.state.screen_on {
            return self.config.idle_cpu_pct;
        }
        self.state
            .current_app
            .as_ref()
            .and_then(|a| self.apps.get(a))
            .map_or(self.config.idle_cpu_pct, |a| a.median_cpu_pct)
    }

    fn bump_size(&self) -> f64 {
        self.state
            .current_app
            .as_ref()
            .and_then(|a| self.apps.get(a))
            .map_or(5.0, |a| a.interaction_bump_pct)
    }

    fn cpu_integral(&self, a: f64, b: f64) -> f64 {
        let len = b - a;
        let tau = self.config.cpu_decay_tau_s;
        let bump = if tau > 0.0 {
            self.bump * tau * (1.0 - (-len / tau).exp())
        } else {
            0.0
        };
        let loads: f64 = self.loads.iter().map(|l| l.cpu_pct * l.overlap(a, b)).sum();
        self.target_cpu() * len + bump + loads
    }

    fn decay_bump(&mut self, len: f64) {
        let tau = self.config.cpu_decay_tau_s;
        self.bump = if tau > 0.0 {
            self.bump * (-len / tau).exp()
        } else {
            0.0
        };
    }

    /// Advances the device by `dt` seconds, applying any timed effects that
    /// fall due. `cpu_pct` becomes the exact mean over the step.
    pub fn step(&mut self, dt: f64) -> &DeviceState {
        if dt <= 0.0 {
            return &self.state;
        }
        let t0 = self.clock;
        let t1 = t0 + dt;
        let before = self.content.clone();
        let mut integral = 0.0;
        let mut t = t0;
        loop {
            let due = self
                .state
                .pending_actions
                .first()
                .filter(|e| e.at <= t1)
                .map(|e| e.at.max(t));
            let seg_end = due.unwrap_or(t1);
            integral += self.cpu_integral(t, seg_end);
            self.decay_bump(seg_end - t);
            t = seg_end;
            if due.is_none() {
                break;
            }
            let effect = self.state.pending_actions.remove(0);
            self.clock = t;
            self.apply_effect(effect.effect);
        }
        self.clock = t1;
        self.state.cpu_pct = (integral / dt).clamp(0.0, 100.0);

        let fps = self.config.content_fps;
        for load in &self.loads {
            self.content.render_ticks += load.ticks(t1, fps) - load.ticks(t0, fps);
        }
        if let Some(video) = &self.video {
            self.content.video_ticks += video.ticks(t1, fps) - video.ticks(t0, fps);
        }
        self.loads.retain(|l| l.end > t1);
        if self.video.is_some_and(|v| v.end <= t1) {
            self.video = None;
        }
        if self.content != before {
            self.state.frame_seq += 1;
        }
        &self.state
    }

    fn add_bump(&mut self) {
        let room = (100.0 - self.target_cpu()).max(0.0);
        self.bump = (self.bump + self.bump_size()).min(room);
    }

    fn apply_effect(&mut self, effect: Effect) {
        match effect {
            Effect::Input { input } => match input {
                InputKind::Key { code } if code == KEYCODE_POWER => {
                    self.state.screen_on = !self.state.screen_on;
                    self.content.screen_on = self.state.screen_on;
                }
                InputKind::Scroll { direction } => {
                    self.content.scroll_offset += match direction {
                        ScrollDirection::Down => 1,
                        ScrollDirection::Up => -1,
                    };
                    self.add_bump();
                }
                InputKind::Tap { .. } | InputKind::Key { .. } => {
                    self.content.ui_counter += 1;
                    self.add_bump();
                }
            },
            Effect::SetupStep => {
                self.content.setup_remaining = self.content.setup_remaining.saturating_sub(1);
                self.content.ui_counter += 1;
                self.add_bump();
            }
        }
    }

    fn schedule(&mut self, at: f64, effect: Effect) {
        let at = at.max(self.clock);
        let idx = self.state.pending_actions.partition_point(|e| e.at <= at);
        self.state
            .pending_actions
            .insert(idx, TimedEffect { at, effect });
    }

    /// Queues a user input issued at `t` that reaches the device after
    /// `delay` seconds. Returns the time it takes effect.
    pub fn inject_input(&mut self, input: InputKind, t: f64, delay: f64) -> Result<f64, SimError> {
        let wakes = matches!(input, InputKind::Key { code } if code == KEYCODE_POWER);
        if !self.state.screen_on && !wakes {
            return Err(SimError::ScreenOff);
        }
        let applied = t + delay.max(0.0);
        self.schedule(applied, Effect::Input { input });
        Ok(applied)
    }

    fn app(&self, id: &str) -> Result<&AppProfile, SimError> {
        self.apps
            .get(id)
            .ok_or_else(|| SimError::UnknownApp(id.to_string()))
    }

    pub fn apply_command(&mut self, cmd: &AutomationCommand) -> Result<(), SimError> {
        match cmd {
            AutomationCommand::LaunchApp { app } => {
                let setup = self.app(app)?.setup_steps;
                self.state.current_app = Some(app.clone());
                self.content.app = Some(app.clone());
                self.video = None;
                self.loads.clear();
                if self.fresh.remove(app) && setup > 0 {
                    self.content.setup_remaining = setup;
                    let spacing = self.config.setup_step_spacing_s;
                    for k in 1..=setup {
                        self.schedule(self.clock + spacing * k as f64, Effect::SetupStep);
                    }
                }
                self.add_bump();
            }
            AutomationCommand::LoadUrl { bytes } => {
                let app = match &self.state.current_app {
                    Some(a) if self.apps[a].kind == AppKind::Browser => self.apps[a].clone(),
                    Some(a) => {
                        return Err(SimError::InvalidInState(format!("{a} is not a browser")))
                    }
                    None => return Err(SimError::InvalidInState("no browser open".into())),
                };
                let base = bytes.unwrap_or(app.page_bytes) as f64;
                let z: f64 = StandardNormal.sample(&mut self.rng);
                let fetched = base * (1.0 + app.page_bytes_jitter * z).max(0.0);
                let scaled = fetched * self.state.network.byte_scale_for(&app.id);
                let duration = app_page_load_time(
                    &self.state.network,
                    &app.id,
                    fetched,
                    self.config.page_load_cap_s,
                );
                let work = app.render_cost_pct_s_per_mb * scaled / 1e6;
                if duration > 0.0 {
                    self.loads.push(Activity {
                        start: self.clock,
                        end: self.clock + duration,
                        cpu_pct: work / duration,
                    });
                }
                self.content.page += 1;
                self.content.scroll_offset = 0;
                self.log_event(format!("load_url {scaled:.0} bytes over {duration:.3} s"));
            }
            AutomationCommand::Wait { s } => {
                if !(*s >= 0.0) {
                    return Err(SimError::InvalidCommand("wait must be >= 0".into()));
                }
            }
            AutomationCommand::Scroll { direction, count } => {
                if *count == 0 {
                    return Err(SimError::InvalidCommand("scroll count must be >= 1".into()));
                }
                let spacing = self.config.scroll_spacing_s;
                for k in 0..*count {
                    self.schedule(
                        self.clock + spacing * k as f64,
                        Effect::Input {
                            input: InputKind::Scroll {
                                direction: *direction,
                            },
                        },
                    );
                }
            }
            AutomationCommand::Tap { x, y } => {
                self.schedule(
                    self.clock,
                    Effect::Input {
                        input: InputKind::Tap { x: *x, y: *y },
                    },
                );
            }
            AutomationCommand::Key { code } => {
                self.schedule(
                    self.clock,
                    Effect::Input {
                        input: InputKind::Key { code: *code },
                    },
                );
            }
            AutomationCommand::CleanState { app } => {
                self.app(app)?;
                self.fresh.insert(app.clone());
                if self.state.current_app.as_deref() == Some(app.as_str()) {
                    self.state.current_app = None;
                    self.content.app = None;
                    self.content.setup_remaining = 0;
                    self.loads.clear();
                    self.video = None;
                    self.state
                        .pending_actions
                        .retain(|e| e.effect != Effect::SetupStep);
                }
            }
            AutomationCommand::PlayVideo { duration_s } => {
                if !(*duration_s >= 0.0) {
                    return Err(SimError::InvalidCommand("duration must be >= 0".into()));
                }
                if self.state.current_app.is_none() {
                    return Err(SimError::InvalidInState("no player open".into()));
                }
                self.video = Some(Activity {
                    start: self.clock,
                    end: self.clock + duration_s,
                    cpu_pct: 0.0,
                });
            }
        }
        Ok(())
    }

    /// `(start, end)` of page transfers still in flight.
    pub fn active_loads(&self) -> Vec<(f64, f64)> {
        self.loads.iter().map(|l| (l.start, l.end)).collect()
    }

    /// True while the named app still has first-launch screens ahead of it.
    pub fn is_fresh(&self, app: &str) -> bool {
        self.fresh.contains(app)
    }
}
