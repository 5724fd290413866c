use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PowerSample, DEFAULT_BUFFER_CAPACITY, METER_MAX_CURRENT_MA, METER_MAX_RATE_HZ};

const NANOS_PER_SEC: u128 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub rate_hz: u32,
    pub capacity: usize,
    /// Standard deviation of the additive Gaussian meter noise, in mA.
    pub noise_sigma_ma: f64,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            rate_hz: METER_MAX_RATE_HZ,
            capacity: DEFAULT_BUFFER_CAPACITY,
            noise_sigma_ma: 2.0,
            seed: 0,
        }
    }
}

/// A run of consecutive grid samples dropped on buffer overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub first_index: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub delivered: u64,
    pub lost: u64,
    pub duration_s: f64,
    pub clamped: bool,
    pub gaps: Vec<Gap>,
}

impl TraceStats {
    pub fn loss_fraction(&self) -> f64 {
        let total = self.delivered + self.lost;
        if total == 0 {
            0.0
        } else {
            self.lost as f64 / total as f64
        }
    }
}

#[derive(Debug, Default)]
struct Shared {
    pending: VecDeque<(u64, PowerSample)>,
    capacity: usize,
    gaps: Vec<Gap>,
    produced: u64,
    lost: u64,
    clamped: bool,
    closed: bool,
}

impl Shared {
    fn record_loss(&mut self, index: u64) {
        self.lost += 1;
        match self.gaps.last_mut() {
            Some(g) if g.first_index + g.count == index => g.count += 1,
            _ => self.gaps.push(Gap {
                first_index: index,
                count: 1,
            }),
        }
    }
}

/// Producer side of a meter stream. Samples land on the fixed grid
/// `t_i = i / rate` and go into a bounded buffer; when the buffer is full the
/// oldest pending sample is dropped and accounted as a gap. Producing never
/// waits on the consumer.
#[derive(Debug)]
pub struct SampleStream {
    config: StreamConfig,
    voltage: f64,
    elapsed_ns: u128,
    next_index: u64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    shared: Arc<Mutex<Shared>>,
}

impl SampleStream {
    pub fn new(config: StreamConfig, voltage: f64) -> Self {
        let noise = (config.noise_sigma_ma > 0.0)
            .then(|| Normal::new(0.0, config.noise_sigma_ma).expect("finite sigma"));
        Self {
            config,
            voltage,
            elapsed_ns: 0,
            next_index: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            noise,
            shared: Arc::new(Mutex::new(Shared {
                capacity: config.capacity.max(1),
                ..Shared::default()
            })),
        }
    }

    pub fn reader(&self) -> StreamReader {
        StreamReader {
            shared: Arc::clone(&self.shared),
        }
    }

    pub fn rate_hz(&self) -> u32 {
        self.config.rate_hz
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed_ns as f64 / NANOS_PER_SEC as f64
    }

    /// Emits the grid samples inside the next `dt` seconds, all carrying
    /// `current_ma` plus noise.
    pub fn produce(&mut self, dt: f64, current_ma: f64) {
        self.elapsed_ns += (dt * 1e9).round().max(0.0) as u128;
        let rate = self.config.rate_hz as u128;
        // number of grid points with i / rate < elapsed
        let due = (self.elapsed_ns * rate).div_ceil(NANOS_PER_SEC) as u64;
        if due <= self.next_index {
            return;
        }
        let mut shared = lock(&self.shared);
        for index in self.next_index..due {
            let mut current = current_ma;
            if let Some(noise) = &self.noise {
                current += noise.sample(&mut self.rng);
            }
            if current > METER_MAX_CURRENT_MA {
                current = METER_MAX_CURRENT_MA;
                shared.clamped = true;
            } else if current < 0.0 {
                current = 0.0;
            }
            if shared.pending.len() >= shared.capacity {
                if let Some((dropped, _)) = shared.pending.pop_front() {
                    shared.record_loss(dropped);
                }
            }
            shared.pending.push_back((
                index,
                PowerSample {
                    t: index as f64 / self.config.rate_hz as f64,
                    current_ma: current,
                    voltage_v: self.voltage,
                },
            ));
            shared.produced += 1;
        }
        self.next_index = due;
    }

    /// Closes the stream. Samples still pending stay readable.
    pub fn close(self) -> TraceStats {
        let mut shared = lock(&self.shared);
        shared.closed = true;
        TraceStats {
            delivered: shared.produced - shared.lost,
            lost: shared.lost,
            duration_s: self.elapsed_ns as f64 / NANOS_PER_SEC as f64,
            clamped: shared.clamped,
            gaps: shared.gaps.clone(),
        }
    }
}

/// Consumer side of a meter stream; cheap to clone.
#[derive(Debug, Clone)]
pub struct StreamReader {
    shared: Arc<Mutex<Shared>>,
}

impl StreamReader {
    /// Takes up to `max_n` pending samples in timestamp order.
    pub fn read_samples(&self, max_n: usize) -> Vec<PowerSample> {
        let mut shared = lock(&self.shared);
        let n = max_n.min(shared.pending.len());
        shared.pending.drain(..n).map(|(_, s)| s).collect()
    }

    pub fn pending(&self) -> usize {
        lock(&self.shared).pending.len()
    }

    pub fn is_closed(&self) -> bool {
        lock(&self.shared).closed
    }

    pub fn gaps(&self) -> Vec<Gap> {
        lock(&self.shared).gaps.clone()
    }

    pub fn clamped(&self) -> bool {
        lock(&self.shared).clamped
    }
}

fn lock(shared: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    shared.lock().unwrap_or_else(|e| e.into_inner())
}
