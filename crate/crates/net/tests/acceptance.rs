//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero when any of them fails.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use powerbench_core::agent::{
    reference_device, Agent, AgentConfig, ApiCall, ExecutionRecord, Fault, FaultPoint, Outcome,
};
use powerbench_core::analysis::{integrate_discharge, IntegrationOptions, Trace};
use powerbench_core::coordinator::{
    ArtifactLevel, Coordinator, CoordinatorConfig, DeviceSpec, JobConstraints, JobManifest, JobStatus, MeterSpec,
    Role, TokenEntry, VantagePointManifest,
};
use powerbench_core::devicesim::AutomationCommand;
use powerbench_core::hwsim::{HardwareBackend, PowerSample, PowerSource, SimHardware, StreamConfig, TraceMetadata};
use powerbench_core::scenario::{run_and_report, Report, Scenario};
use powerbench_core::session::{DelayModel, SessionConfig};
use powerbench_net::{agent, coordinator, Client};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

// ---------------------------------------------------------------------------
// Integration oracle

fn synth(rate_hz: u32, duration_s: f64, f: impl Fn(f64) -> f64) -> Trace {
    let n = (duration_s * rate_hz as f64).round() as usize;
    let samples: Vec<PowerSample> = (0..=n)
        .map(|i| {
            let t = i as f64 / rate_hz as f64;
            PowerSample {
                t,
                current_ma: f(t),
                voltage_v: 3.85,
            }
        })
        .collect();
    let meta = TraceMetadata {
        device_id: "j7duo".into(),
        rate_hz,
        voltage_v: 3.85,
        delivered: samples.len() as u64,
        ..TraceMetadata::default()
    };
    Trace::new(meta, samples)
}

/// Midpoint sum on a grid ten times finer than the trace.
fn riemann_mah(rate_hz: u32, duration_s: f64, f: impl Fn(f64) -> f64) -> f64 {
    let fine = rate_hz as f64 * 10.0;
    let n = (duration_s * fine).round() as usize;
    let h = 1.0 / fine;
    (0..n).map(|k| f((k as f64 + 0.5) * h) * h).sum::<f64>() / 3600.0
}

fn integration_oracle() -> Verdict {
    let opts = IntegrationOptions::default;
    let q = integrate_discharge(&synth(5000, 300.0, |_| 200.0), opts()).map_err(|e| e.to_string())?;
    ensure!(rel(q, 200.0 * 300.0 / 3600.0) <= 1e-6, "constant load gave {q}");
    ensure!(rel(q, 16.666667) <= 1e-6, "constant load gave {q}");

    let ramp = integrate_discharge(&synth(1000, 3600.0, |t| 1000.0 * t / 3600.0), opts()).map_err(|e| e.to_string())?;
    ensure!(rel(ramp, 500.0) <= 1e-6, "ramp gave {ramp}");

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let base = rng.random_range(100.0..400.0);
        let terms: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
            .map(|_| {
                (
                    rng.random_range(0.0..60.0),
                    rng.random_range(0.05..5.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let f = |t: f64| base + terms.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum::<f64>();
        let q = integrate_discharge(&synth(1000, 20.0, f), opts()).map_err(|e| e.to_string())?;
        let err = rel(q, riemann_mah(1000, 20.0, f));
        worst = worst.max(err);
        ensure!(err <= 1e-6, "smooth load off by {err:e}");
    }
    Ok(format!("constant {q:.6} mAh, ramp {ramp:.6} mAh, worst smooth-load error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// Relay and meter safety

const SAFETY_DEVICES: [&str; 3] = ["j7duo", "pixel", "ghost"];

fn two_device_agent() -> Agent {
    let pixel = DeviceSpec {
        device_id: "pixel".into(),
        ..reference_device()
    };
    Agent::new(AgentConfig {
        devices: vec![reference_device(), pixel],
        ..AgentConfig::reference()
    })
    .expect("reference config is valid")
}

fn safe(a: &Agent) -> Result<(), String> {
    let hw = a.hardware();
    let m = hw.meter();
    ensure!(hw.relays().vout_count() <= 1, "two devices on Vout");
    ensure!(!m.powered || hw.socket().on, "meter powered with socket off");
    if m.sampling {
        ensure!(m.powered, "sampling while unpowered");
        let Some(d) = hw.relays().vout_device() else {
            return Err("sampling with nothing on Vout".into());
        };
        ensure!(hw.usb_port_on(d) == Some(false), "sampling {d} with USB on");
    }
    if let Some(d) = a.measured_device() {
        ensure!(hw.usb_port_on(d) == Some(false), "measuring {d} with USB on");
    }
    Ok(())
}

fn random_call(rng: &mut ChaCha8Rng) -> ApiCall {
    let dev = SAFETY_DEVICES[rng.random_range(0..SAFETY_DEVICES.len())].to_string();
    match rng.random_range(0..8) {
        0 => ApiCall::ListDevices,
        1 => ApiCall::DeviceMirroring { device_id: dev },
        2 => ApiCall::PowerMonitor,
        3 => ApiCall::SetVoltage {
            voltage: rng.random_range(0.0..15.0),
        },
        4 => ApiCall::StartMonitor {
            device_id: dev,
            duration_s: rng.random_range(0.0..0.5),
        },
        5 => ApiCall::StopMonitor,
        6 => ApiCall::BattSwitch { device_id: dev },
        _ => ApiCall::ExecuteAdb {
            device_id: dev,
            command: AutomationCommand::Tap {
                x: rng.random_range(0..2000),
                y: rng.random_range(0..2000),
            },
        },
    }
}

fn at_rest(a: &Agent) -> bool {
    let hw = a.hardware();
    !hw.socket().on && hw.relays().iter().all(|(_, s)| s == PowerSource::Battery)
}

fn safety_manifest(mirroring: bool, app: &str) -> JobManifest {
    JobManifest {
        experimenter: "alice".into(),
        label: None,
        constraints: JobConstraints::default(),
        script: vec![
            AutomationCommand::LaunchApp { app: app.into() },
            AutomationCommand::PlayVideo { duration_s: 600.0 },
        ],
        preloaded: false,
        duration_s: 2.0,
        repetitions: 2,
        mirroring,
        voltage: 3.85,
        seed: 11,
        artifacts: ArtifactLevel::Summary,
    }
}

fn relay_meter_safety() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut calls = 0usize;
    let mut accepted = 0usize;
    for seq in 0..10_000 {
        let mut a = two_device_agent();
        for _ in 0..rng.random_range(1..30) {
            if rng.random_bool(0.2) {
                a.advance(rng.random_range(0.0..0.3));
            } else {
                calls += 1;
                accepted += usize::from(a.api_call(random_call(&mut rng)).is_ok());
            }
            safe(&a).map_err(|e| format!("sequence {seq}: {e}"))?;
        }
    }

    let mut dispatches = 0;
    let faults = [
        None,
        Some(FaultPoint::AfterPrepare),
        Some(FaultPoint::DuringScript),
        Some(FaultPoint::BeforeStop),
        Some(FaultPoint::BeforeFinalize),
    ];
    for point in faults {
        for repetition in 0..2 {
            for mirroring in [false, true] {
                for app in ["video", "no-such-app"] {
                    let mut a = two_device_agent();
                    // Leave the bench in a messy state first.
                    let _ = a.api_call(ApiCall::PowerMonitor);
                    let _ = a.api_call(ApiCall::BattSwitch {
                        device_id: "pixel".into(),
                    });
                    a.set_fault(point.map(|point| Fault { point, repetition }));
                    let out = a.handle_dispatch(1, &safety_manifest(mirroring, app), "j7duo");
                    dispatches += 1;
                    ensure!(
                        at_rest(&a),
                        "dispatch {point:?}/{repetition}/{mirroring}/{app} left the bench live"
                    );
                    let expect_done = point.is_none() && app == "video";
                    ensure!(
                        out.record.is_done() == expect_done,
                        "dispatch {point:?}/{app} outcome {:?}",
                        out.record.outcome
                    );
                }
            }
        }
    }
    Ok(format!(
        "10000 sequences, {calls} calls ({accepted} accepted), {dispatches} dispatches all end on battery with socket off"
    ))
}

// ---------------------------------------------------------------------------
// Scheduler

fn admin_tokens() -> Vec<TokenEntry> {
    vec![
        TokenEntry {
            token: "tok-admin".into(),
            principal: "root".into(),
            role: Role::Admin,
        },
        TokenEntry {
            token: "tok-alice".into(),
            principal: "alice".into(),
            role: Role::Experimenter,
        },
    ]
}

fn scheduler_exclusivity_fifo() -> Verdict {
    const DEVICES: [&str; 5] = ["d0", "d1", "d2", "d3", "d4"];
    let cfg = CoordinatorConfig {
        tokens: admin_tokens(),
        ..CoordinatorConfig::default()
    };
    let mut c = Coordinator::open(cfg, 0.0).map_err(|e| e.to_string())?;
    let vp = VantagePointManifest {
        vp_id: "node1".into(),
        endpoint: "node1.lab:2222".into(),
        allowlisted_ips: vec!["10.0.0.5".into()],
        devices: DEVICES
            .iter()
            .map(|d| DeviceSpec {
                device_id: d.to_string(),
                ..reference_device()
            })
            .collect(),
        meter: MeterSpec::default(),
        agent_token: "agent".into(),
    };
    let origin = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 5));
    c.register_vantage_point(vp, "tok-admin", origin, |_| true, 0.0)
        .map_err(|e| e.to_string())?;
    let mut health = Agent::new(AgentConfig::reference()).map_err(|e| e.to_string())?.healthcheck();
    health.devices.clear();

    let shared = Arc::new(Mutex::new(c));
    // Per device: (job id, gate) in submission order.
    let submitted: Arc<Mutex<BTreeMap<String, Vec<u64>>>> = Arc::default();
    let gates: Arc<Mutex<BTreeMap<u64, f64>>> = Arc::default();
    let submitters: Vec<_> = (0..4u64)
        .map(|w| {
            let shared = shared.clone();
            let submitted = submitted.clone();
            let gates = gates.clone();
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + w);
                for _ in 0..25 {
                    let device = DEVICES[rng.random_range(0..DEVICES.len())];
                    let gate = rng.random_bool(0.3).then(|| rng.random_range(20.0..80.0));
                    let m = JobManifest {
                        experimenter: String::new(),
                        label: None,
                        constraints: JobConstraints {
                            device_id: Some(device.into()),
                            cpu_gate_pct: gate,
                            ..JobConstraints::default()
                        },
                        script: vec![AutomationCommand::LaunchApp { app: "video".into() }],
                        preloaded: false,
                        duration_s: 10.0,
                        repetitions: 1,
                        mirroring: false,
                        voltage: 3.85,
                        seed: 1,
                        artifacts: ArtifactLevel::Summary,
                    };
                    // Submission and the record of its order happen under one lock.
                    let mut c = shared.lock().unwrap();
                    let id = c.submit_job(m, "tok-alice", 0.0).expect("valid job");
                    submitted.lock().unwrap().entry(device.to_string()).or_default().push(id);
                    if let Some(g) = gate {
                        gates.lock().unwrap().insert(id, g);
                    }
                    drop(c);
                    std::thread::sleep(Duration::from_micros(rng.random_range(0..300)));
                }
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut dispatched: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut finished = 0usize;
    let mut now = 0.0;
    let deadline = Instant::now() + Duration::from_secs(60);
    while finished < 100 {
        ensure!(Instant::now() < deadline, "only {finished} of 100 jobs finished");
        now += 1.0;
        let cpu = rng.random_range(0.0..100.0);
        health.cpu_pct = cpu;
        let mut c = shared.lock().unwrap();
        c.heartbeat("node1", Some(&health), now).map_err(|e| e.to_string())?;
        for d in c.schedule(now).map_err(|e| e.to_string())? {
            if let Some(g) = gates.lock().unwrap().get(&d.job_id) {
                ensure!(cpu <= *g, "job {} dispatched at {cpu:.1}% over its {g:.1}% gate", d.job_id);
            }
            dispatched.entry(d.device_id.clone()).or_default().push(d.job_id);
        }
        let mut per_device: BTreeMap<String, u64> = BTreeMap::new();
        let running: Vec<u64> = c
            .jobs()
            .filter(|j| j.status == JobStatus::Running)
            .map(|j| j.job_id)
            .collect();
        for id in &running {
            let a = c.job(*id).and_then(|j| j.assigned.clone()).ok_or("running job without device")?;
            if let Some(other) = per_device.insert(a.device_id.clone(), *id) {
                return Err(format!("jobs {other} and {id} both RUNNING on {}", a.device_id));
            }
        }
        for id in running {
            if rng.random_bool(0.5) {
                c.report_status("node1", id, JobStatus::Done, None, None, now)
                    .map_err(|e| e.to_string())?;
                finished += 1;
            }
        }
        drop(c);
        std::thread::yield_now();
    }
    for s in submitters {
        s.join().map_err(|_| "submitter panicked")?;
    }
    let submitted = submitted.lock().unwrap();
    ensure!(*submitted == dispatched, "per-device dispatch order differs from submission order");
    let gated = gates.lock().unwrap().len();
    Ok(format!("100 jobs on 5 devices over {now} ticks, {gated} gated, FIFO per device"))
}

// ---------------------------------------------------------------------------
// Sampling

fn sampling_integrity() -> Verdict {
    let mut hw = SimHardware::new(["j7duo"]);
    let e = |e: powerbench_core::hwsim::HwError| e.to_string();
    hw.socket_set(true).map_err(e)?;
    hw.meter_power(true).map_err(e)?;
    hw.meter_set_voltage(3.85).map_err(e)?;
    hw.relay_switch("j7duo", PowerSource::Vout).map_err(e)?;
    hw.usb_port_set("j7duo", false).map_err(e)?;
    let reader = hw
        .start_sampling(StreamConfig {
            rate_hz: 5000,
            seed: 3,
            ..StreamConfig::default()
        })
        .map_err(e)?;
    let mut samples = Vec::new();
    for _ in 0..1000 {
        hw.advance(0.01, 160.0);
        samples.extend(reader.read_samples(usize::MAX));
    }
    let stats = hw.stop_sampling().map_err(e)?;
    samples.extend(reader.read_samples(usize::MAX));
    ensure!(samples.len() == 50_000, "{} samples", samples.len());
    ensure!(stats.delivered == 50_000 && stats.lost == 0, "delivered {} lost {}", stats.delivered, stats.lost);
    ensure!(stats.gaps.is_empty(), "{} gaps", stats.gaps.len());
    for (i, s) in samples.iter().enumerate() {
        ensure!(s.t == i as f64 / 5000.0, "sample {i} at t={}", s.t);
    }
    Ok("50000 samples, no gaps, t_i = i/5000 exactly".into())
}

// ---------------------------------------------------------------------------
// Scenarios

fn run_builtin(name: &str) -> Result<Report, String> {
    let sc = Scenario::builtin(name).map_err(|e| e.to_string())?;
    let (report, _) = run_and_report(&sc, &AgentConfig::reference()).map_err(|e| e.to_string())?;
    ensure!(report.failures.is_empty(), "{name}: failed jobs {:?}", report.failures);
    Ok(report)
}

fn mean_discharge(r: &Report, group: &str, variant: &str) -> Result<f64, String> {
    r.series(group, variant)
        .and_then(|s| s.discharge)
        .map(|d| d.mean)
        .ok_or_else(|| format!("no discharge for {group}:{variant}"))
}

fn digests(r: &Report, group: &str, variant: &str) -> Vec<String> {
    r.runs_of(group, variant).map(|run| run.digest.clone()).collect()
}

fn accuracy_scenario() -> Verdict {
    let r = run_builtin("accuracy-fig1")?;
    let median = |v: &str| {
        r.series("video", v)
            .and_then(|s| s.median_current_ma)
            .ok_or_else(|| format!("no median for video:{v}"))
    };
    let headless = median("relay")?;
    let mirroring = median("relay-mirroring")?;
    ensure!((headless - 160.0).abs() <= 8.0, "headless median {headless:.2} mA");
    ensure!((mirroring - 220.0).abs() <= 11.0, "mirroring median {mirroring:.2} mA");
    ensure!((median("direct")? - 160.0).abs() <= 8.0, "direct median off");
    ensure!((median("direct-mirroring")? - 220.0).abs() <= 11.0, "direct mirroring median off");
    for (a, b) in [("relay", "direct"), ("relay-mirroring", "direct-mirroring")] {
        let (da, db) = (digests(&r, "video", a), digests(&r, "video", b));
        ensure!(!da.is_empty() && da == db, "{a} and {b} traces differ");
    }
    Ok(format!("headless median {headless:.2} mA, mirroring {mirroring:.2} mA, direct == relay"))
}

fn browser_scenario() -> Verdict {
    let r = run_builtin("browsers-fig2")?;
    let browsers = ["brave", "chrome", "edge", "firefox"];
    let mut offsets = Vec::new();
    for variant in ["headless", "mirroring"] {
        let runs = r.runs.iter().filter(|x| x.variant == variant && x.valid).count();
        ensure!(runs == 20, "{variant}: {runs} valid runs");
        let m: Vec<f64> = ["brave", "chrome", "firefox"]
            .iter()
            .map(|b| mean_discharge(&r, b, variant))
            .collect::<Result<_, _>>()?;
        ensure!(m[0] < m[1] && m[1] < m[2], "{variant}: brave {:.3} chrome {:.3} firefox {:.3}", m[0], m[1], m[2]);
    }
    for b in browsers {
        offsets.push(mean_discharge(&r, b, "mirroring")? - mean_discharge(&r, b, "headless")?);
    }
    let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ensure!(lo > 0.0 && hi - lo <= 0.1 * lo, "mirroring offsets {offsets:?}");
    Ok(format!("Brave < Chrome < Firefox in both modes, offsets {lo:.3}..{hi:.3} mAh"))
}

fn location_scenario() -> Verdict {
    let r = run_builtin("locations-fig6")?;
    let locations = ["south-africa", "china", "japan", "brazil", "california"];
    let brave: Vec<_> = locations
        .iter()
        .map(|l| r.series("brave", l).and_then(|s| s.discharge).ok_or(format!("no brave:{l}")))
        .collect::<Result<_, _>>()?;
    let lo = brave.iter().map(|s| s.mean).fold(f64::INFINITY, f64::min);
    let hi = brave.iter().map(|s| s.mean).fold(f64::NEG_INFINITY, f64::max);
    let pooled = (brave.iter().map(|s| s.std * s.std).sum::<f64>() / brave.len() as f64).sqrt();
    ensure!(hi - lo <= pooled, "brave spread {:.4} > std {pooled:.4}", hi - lo);
    let japan = mean_discharge(&r, "chrome", "japan")?;
    for l in locations.iter().filter(|l| **l != "japan") {
        let other = mean_discharge(&r, "chrome", l)?;
        ensure!(japan < other, "chrome japan {japan:.3} not below {l} {other:.3}");
    }
    Ok(format!("brave spread {:.4} <= std {pooled:.4} mAh, chrome japan {japan:.3} mAh lowest", hi - lo))
}

// ---------------------------------------------------------------------------
// Latency probe

fn latency_probe() -> Verdict {
    let probe = |delay: DelayModel, n: usize| {
        let mut a = Agent::new(AgentConfig {
            session: SessionConfig {
                channel_delay: delay,
                ..SessionConfig::default()
            },
            ..AgentConfig::reference()
        })
        .map_err(|e| e.to_string())?;
        let s = a.open_session("j7duo", true).map_err(|e| e.to_string())?.session_id;
        a.probe_latency(s, n).map_err(|e| e.to_string())
    };
    let stats = probe(
        DelayModel::Normal {
            mean_s: 1.44,
            std_s: 0.12,
        },
        40,
    )?;
    ensure!(stats.n == 40, "{} probes", stats.n);
    ensure!((1.40..=1.49).contains(&stats.mean_s), "mean {:.4} s", stats.mean_s);
    ensure!((0.08..=0.18).contains(&stats.std_s), "std {:.4} s", stats.std_s);
    let zero = probe(DelayModel::Fixed { s: 0.0 }, 40)?;
    ensure!(zero.mean_s <= 0.1, "zero-delay mean {:.4} s", zero.mean_s);
    Ok(format!(
        "mean {:.3} s, std {:.3} s; zero delay mean {:.3} s",
        stats.mean_s, stats.std_s, zero.mean_s
    ))
}

// ---------------------------------------------------------------------------
// Protocol round trip over loopback TCP

async fn protocol_round_trip() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let coord_cfg = CoordinatorConfig {
        heartbeat_interval_s: 0.2,
        schedule_period_s: 0.1,
        data_dir: Some(dir.path().to_path_buf()),
        tokens: admin_tokens(),
        ..CoordinatorConfig::default()
    };
    let local = || async { tokio::net::TcpListener::bind("127.0.0.1:0").await };
    let io = |e: std::io::Error| e.to_string();
    let c = coordinator::start(coord_cfg.clone(), local().await.map_err(io)?, local().await.map_err(io)?)
        .await
        .map_err(io)?;
    let agent_cfg = AgentConfig {
        coordinator: Some(c.agent_addr().to_string()),
        token: Some("node1-secret".into()),
        heartbeat_interval_s: 0.2,
        ..AgentConfig::reference()
    };
    let a = agent::start(
        agent_cfg,
        agent::AgentOptions::default(),
        local().await.map_err(io)?,
        local().await.map_err(io)?,
        local().await.map_err(io)?,
    )
    .await
    .map_err(io)?;

    let http = c.http_addr().to_string();
    let vp: VantagePointManifest = serde_json::from_value(json!({
        "vp_id": "node1",
        "endpoint": a.control_addr().to_string(),
        "allowlisted_ips": ["127.0.0.1"],
        "devices": [reference_device()],
        "agent_token": "node1-secret",
    }))
    .map_err(|e| e.to_string())?;
    let manifest: JobManifest = serde_json::from_value(json!({
        "constraints": {"device_id": "j7duo"},
        "script": [{"cmd": "launch_app", "app": "video"}, {"cmd": "play_video", "duration_s": 30}],
        "duration_s": 5,
        "repetitions": 2,
        "seed": 9
    }))
    .map_err(|e| e.to_string())?;

    let blocking = |f: Box<dyn FnOnce() -> Verdict + Send>| tokio::task::block_in_place(f);
    let http2 = http.clone();
    blocking(Box::new(move || {
        Client::new(&http2, "tok-admin").register(&vp).map_err(|e| e.to_string())?;
        Ok(String::new())
    }))?;
    ensure!(a.wait_connected(Duration::from_secs(10)).await, "agent never connected");

    let alice = Client::new(&http, "tok-alice");
    let (id, record, files) = tokio::task::block_in_place(|| -> Result<_, String> {
        let id = alice.submit(&manifest).map_err(|e| e.to_string())?;
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let job = alice.job(id).map_err(|e| e.to_string())?;
            match job.status {
                JobStatus::Done => break,
                JobStatus::Failed | JobStatus::Cancelled => return Err(format!("job ended {:?}: {:?}", job.status, job.reason)),
                _ if Instant::now() > deadline => return Err(format!("job stuck in {:?}", job.status)),
                _ => std::thread::sleep(Duration::from_millis(50)),
            }
        }
        let bundle = alice.artifacts(id).map_err(|e| e.to_string())?;
        let record: ExecutionRecord = serde_json::from_slice(bundle.file("summary.json").ok_or("no summary.json")?)
            .map_err(|e| e.to_string())?;
        Ok((id, record, bundle.files.len()))
    })?;
    ensure!(matches!(record.outcome, Outcome::Done), "outcome {:?}", record.outcome);
    ensure!(record.traces.len() == 2, "{} traces", record.traces.len());

    let before: Vec<_> = c.with_state(|s| s.jobs().cloned().collect());
    a.shutdown().await;
    c.shutdown().await;
    let restarted = coordinator::start(coord_cfg, local().await.map_err(io)?, local().await.map_err(io)?)
        .await
        .map_err(io)?;
    let after: Vec<_> = restarted.with_state(|s| s.jobs().cloned().collect());
    let http = restarted.http_addr().to_string();
    let replayed_files = tokio::task::block_in_place(|| {
        Client::new(&http, "tok-alice")
            .artifacts(id)
            .map(|b| b.files.len())
            .map_err(|e| e.to_string())
    })?;
    restarted.shutdown().await;
    ensure!(before == after, "journal replay changed job state");
    ensure!(replayed_files == files, "artifacts after restart: {replayed_files} files, before {files}");
    Ok(format!(
        "job {id} DONE over TCP with {files} artifact files; {} job(s) identical after replay",
        after.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .expect("runtime");
    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("integration oracle", Box::new(integration_oracle)),
        ("relay/meter safety", Box::new(relay_meter_safety)),
        ("scheduler exclusivity + FIFO", Box::new(scheduler_exclusivity_fifo)),
        ("sampling integrity", Box::new(sampling_integrity)),
        ("accuracy scenario", Box::new(accuracy_scenario)),
        ("browser scenario", Box::new(browser_scenario)),
        ("location scenario", Box::new(location_scenario)),
        ("latency probe", Box::new(latency_probe)),
        ("protocol round trip", Box::new(|| runtime.block_on(protocol_round_trip()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name:<30} {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<30} {detail} ({secs:.1}s)");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
