use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DeviceState, SimError};
use crate::hwsim::METER_MAX_CURRENT_MA;

/// Maps device state to current draw:
/// `i_base + screen·i_screen + i_cpu·(cpu + mirroring·overhead)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadModel {
    pub i_base_ma: f64,
    pub i_screen_ma: f64,
    /// mA per CPU percentage point.
    pub i_cpu_ma: f64,
    /// CPU points the screencast encoder adds while mirroring.
    pub mirror_cpu_overhead_pct: f64,
    pub noise_sigma_ma: f64,
}

impl Default for LoadModel {
    fn default() -> Self {
        Self {
            i_base_ma: 40.0,
            i_screen_ma: 60.0,
            i_cpu_ma: 12.0,
            mirror_cpu_overhead_pct: 5.0,
            noise_sigma_ma: 2.0,
        }
    }
}

impl LoadModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("i_base_ma", self.i_base_ma),
            ("i_screen_ma", self.i_screen_ma),
            ("i_cpu_ma", self.i_cpu_ma),
            ("mirror_cpu_overhead_pct", self.mirror_cpu_overhead_pct),
            ("noise_sigma_ma", self.noise_sigma_ma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn effective_cpu(&self, state: &DeviceState) -> f64 {
        state.cpu_pct
            + if state.mirroring {
                self.mirror_cpu_overhead_pct
            } else {
                0.0
            }
    }

    /// Noise-free current, clamped to the meter range.
    pub fn mean_current_ma(&self, state: &DeviceState) -> f64 {
        let screen = if state.screen_on {
            self.i_screen_ma
        } else {
            0.0
        };
        let i = self.i_base_ma + screen + self.i_cpu_ma * self.effective_cpu(state);
        i.clamp(0.0, METER_MAX_CURRENT_MA)
    }

    /// Current with an additive noise term already drawn by the caller.
    pub fn instantaneous_current_ma(&self, state: &DeviceState, noise_ma: f64) -> f64 {
        let screen = if state.screen_on {
            self.i_screen_ma
        } else {
            0.0
        };
        let i = self.i_base_ma + screen + self.i_cpu_ma * self.effective_cpu(state) + noise_ma;
        i.clamp(0.0, METER_MAX_CURRENT_MA)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppKind {
    Browser,
    Video,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub id: String,
    pub kind: AppKind,
    pub median_cpu_pct: f64,
    /// Bytes fetched per page when a script does not say otherwise.
    #[serde(default)]
    pub page_bytes: u64,
    /// Relative standard deviation of page size between loads (rotating ads).
    #[serde(default)]
    pub page_bytes_jitter: f64,
    /// CPU percentage-seconds spent rendering each megabyte.
    #[serde(default)]
    pub render_cost_pct_s_per_mb: f64,
    /// CPU points added by each input event, decaying back to the median.
    #[serde(default)]
    pub interaction_bump_pct: f64,
    /// Taps needed to get through the first-launch screens.
    #[serde(default)]
    pub setup_steps: u32,
}

impl AppProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=100.0).contains(&self.median_cpu_pct) {
            return Err(SimError::InvalidConfig(format!(
                "{}: median_cpu_pct must be within [0, 100]",
                self.id
            )));
        }
        if self.page_bytes_jitter < 0.0
            || self.render_cost_pct_s_per_mb < 0.0
            || self.interaction_bump_pct < 0.0
        {
            return Err(SimError::InvalidConfig(format!(
                "{}: coefficients must be >= 0",
                self.id
            )));
        }
        Ok(())
    }

    fn browser(id: &str, cpu: f64, page_bytes: u64, setup_steps: u32) -> Self {
        Self {
            id: id.to_string(),
            kind: AppKind::Browser,
            median_cpu_pct: cpu,
            page_bytes,
            page_bytes_jitter: 0.1,
            render_cost_pct_s_per_mb: 15.0,
            interaction_bump_pct: 10.0,
            setup_steps,
        }
    }

    /// Built-in calibration: the four browsers plus a video player.
    pub fn defaults() -> Vec<AppProfile> {
        vec![
            Self::browser("brave", 12.0, 1_200_000, 2),
            Self::browser("chrome", 20.0, 2_000_000, 3),
            Self::browser("edge", 16.0, 1_800_000, 2),
            Self::browser("firefox", 24.0, 2_200_000, 2),
            Self {
                id: "video".into(),
                kind: AppKind::Video,
                median_cpu_pct: 5.0,
                page_bytes: 0,
                page_bytes_jitter: 0.0,
                render_cost_pct_s_per_mb: 0.0,
                interaction_bump_pct: 5.0,
                setup_steps: 0,
            },
        ]
    }
}

/// Network conditions at a test location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub down_mbps: f64,
    pub up_mbps: f64,
    pub rtt_ms: f64,
    #[serde(default = "one")]
    pub byte_scale: f64,
    /// Per-app overrides of `byte_scale`.
    #[serde(default)]
    pub app_byte_scale: BTreeMap<String, f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for NetworkProfile {
    fn default() -> Self {
        Self::new("lan", 100.0, 100.0, 1.0)
    }
}

impl NetworkProfile {
    pub fn new(name: &str, down_mbps: f64, up_mbps: f64, rtt_ms: f64) -> Self {
        Self {
            name: name.to_string(),
            down_mbps,
            up_mbps,
            rtt_ms,
            byte_scale: 1.0,
            app_byte_scale: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let scale_ok = |s: f64| s > 0.0 && s <= 2.0;
        if !(self.down_mbps > 0.0 && self.up_mbps > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "{}: bandwidth must be > 0",
                self.name
            )));
        }
        if !(self.rtt_ms >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "{}: rtt must be >= 0",
                self.name
            )));
        }
        if !scale_ok(self.byte_scale) || !self.app_byte_scale.values().all(|s| scale_ok(*s)) {
            return Err(SimError::InvalidConfig(format!(
                "{}: byte_scale must be within (0, 2]",
                self.name
            )));
        }
        Ok(())
    }

    pub fn byte_scale_for(&self, app: &str) -> f64 {
        self.app_byte_scale
            .get(app)
            .copied()
            .unwrap_or(self.byte_scale)
    }

    /// The five VPN exit locations used for the location study.
    pub fn vpn_locations() -> Vec<NetworkProfile> {
        let mut japan = Self::new("japan", 9.68, 7.76, 239.38);
        japan.app_byte_scale.insert("chrome".into(), 0.8);
        vec![
            Self::new("south-africa", 6.26, 9.77, 222.04),
            Self::new("china", 7.64, 7.77, 286.32),
            japan,
            Self::new("brazil", 9.75, 8.82, 235.05),
            Self::new("california", 10.63, 14.87, 215.16),
        ]
    }
}

pub const DEFAULT_PAGE_LOAD_CAP_S: f64 = 30.0;

/// Seconds to fetch a page: one round trip plus serialization of
/// `page_bytes × byte_scale` at the downlink rate, capped at `cap_s`.
pub fn page_load_time(profile: &NetworkProfile, page_bytes: f64, cap_s: f64) -> f64 {
    transfer_time(profile, page_bytes * profile.byte_scale, cap_s)
}

/// As [`page_load_time`], but honouring the profile's per-app byte scale.
pub fn app_page_load_time(profile: &NetworkProfile, app: &str, page_bytes: f64, cap_s: f64) -> f64 {
    transfer_time(profile, page_bytes * profile.byte_scale_for(app), cap_s)
}

fn transfer_time(profile: &NetworkProfile, bytes: f64, cap_s: f64) -> f64 {
    let t = profile.rtt_ms / 1000.0 + bytes.max(0.0) * 8.0 / (profile.down_mbps * 1e6);
    t.min(cap_s)
}
