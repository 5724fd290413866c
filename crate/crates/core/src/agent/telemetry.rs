use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Load the controller itself carries. Pulling meter readings costs a flat
/// share of CPU; mirroring adds the encoder and streaming stack on top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerModel {
    pub idle_cpu_pct: f64,
    pub sampling_cpu_pct: f64,
    pub sampling_cpu_sigma: f64,
    pub mirroring_cpu_pct: f64,
    pub mirroring_cpu_sigma: f64,
    pub idle_mem_pct: f64,
    pub mirroring_mem_pct: f64,
    pub mem_sigma: f64,
    /// Control-channel traffic per second, on top of mirrored frames.
    pub control_bytes_per_s: u64,
}

impl Default for ControllerModel {
    fn default() -> Self {
        Self {
            idle_cpu_pct: 3.0,
            sampling_cpu_pct: 22.0,
            sampling_cpu_sigma: 1.0,
            mirroring_cpu_pct: 50.0,
            mirroring_cpu_sigma: 15.0,
            idle_mem_pct: 12.0,
            mirroring_mem_pct: 6.0,
            mem_sigma: 0.5,
            control_bytes_per_s: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t: f64,
    pub cpu_pct: f64,
    pub mem_pct: f64,
    /// Bytes uploaded since the previous sample.
    pub up_bytes: u64,
}

pub const TELEMETRY_HISTORY: usize = 4096;

#[derive(Debug, Clone)]
pub struct Telemetry {
    model: ControllerModel,
    rng: ChaCha8Rng,
    period_ns: u64,
    next_ns: u64,
    last_up_total: u64,
    history: VecDeque<TelemetrySample>,
    recording: Option<Vec<TelemetrySample>>,
}

impl Telemetry {
    pub fn new(model: ControllerModel, period_s: f64, seed: u64) -> Self {
        let period_ns = ((period_s * 1e9).round() as u64).max(1);
        Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            period_ns,
            next_ns: period_ns,
            last_up_total: 0,
            history: VecDeque::new(),
            recording: None,
        }
    }

    /// Restarts the sampling grid at `now_ns` with a fresh noise stream.
    pub fn restart(&mut self, now_ns: u64, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.next_ns = now_ns + self.period_ns;
    }

    pub fn period_ns(&self) -> u64 {
        self.period_ns
    }

    pub fn due(&self, now_ns: u64) -> bool {
        now_ns >= self.next_ns
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Records every sample whose tick has passed by `now_ns`.
    pub fn tick(&mut self, now_ns: u64, sampling: bool, mirroring: bool, up_total: u64) {
        while self.next_ns <= now_ns {
            let m = self.model;
            let mut cpu = m.idle_cpu_pct;
            if sampling {
                cpu += m.sampling_cpu_pct + m.sampling_cpu_sigma * self.normal();
            }
            if mirroring {
                cpu += m.mirroring_cpu_pct + m.mirroring_cpu_sigma * self.normal();
            }
            let mut mem = m.idle_mem_pct + m.mem_sigma * self.normal();
            if mirroring {
                mem += m.mirroring_mem_pct;
            }
            let period_s = self.period_ns as f64 / 1e9;
            let up = up_total.saturating_sub(self.last_up_total)
                + (m.control_bytes_per_s as f64 * period_s) as u64;
            self.last_up_total = up_total;
            if self.history.len() >= TELEMETRY_HISTORY {
                self.history.pop_front();
            }
            let sample = TelemetrySample {
                t: self.next_ns as f64 / 1e9,
                cpu_pct: cpu.clamp(0.0, 100.0),
                mem_pct: mem.clamp(0.0, 100.0),
                up_bytes: up,
            };
            if let Some(rec) = self.recording.as_mut() {
                rec.push(sample);
            }
            self.history.push_back(sample);
            self.next_ns += self.period_ns;
        }
    }

    pub fn latest(&self) -> Option<&TelemetrySample> {
        self.history.back()
    }

    pub fn since(&self, t: f64) -> Vec<TelemetrySample> {
        self.history.iter().filter(|s| s.t > t).copied().collect()
    }

    /// Starts keeping every sample until [`Telemetry::stop_recording`].
    pub fn start_recording(&mut self) {
        self.recording = Some(Vec::new());
    }

    pub fn stop_recording(&mut self) -> Vec<TelemetrySample> {
        self.recording.take().unwrap_or_default()
    }
}
