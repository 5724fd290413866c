#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use powerbench_core::agent::{reference_device, AgentConfig};
use powerbench_core::coordinator::{CoordinatorConfig, Role, TokenEntry, VantagePointManifest};
use powerbench_net::agent::{self, AgentHandle, AgentOptions};
use powerbench_net::coordinator::{self, CoordinatorHandle};
use powerbench_net::Client;
use serde_json::json;
use tokio::net::TcpListener;

pub const AGENT_TOKEN: &str = "node1-secret";

pub fn tokens() -> Vec<TokenEntry> {
    [
        ("tok-admin", "root", Role::Admin),
        ("tok-alice", "alice", Role::Experimenter),
        ("tok-bob", "bob", Role::Experimenter),
        ("tok-tess", "tess", Role::Tester),
    ]
    .into_iter()
    .map(|(t, p, r)| TokenEntry {
        token: t.into(),
        principal: p.into(),
        role: r,
    })
    .collect()
}

pub fn coordinator_config(data_dir: Option<&Path>) -> CoordinatorConfig {
    CoordinatorConfig {
        heartbeat_interval_s: 0.2,
        schedule_period_s: 0.1,
        data_dir: data_dir.map(Path::to_path_buf),
        tokens: tokens(),
        ..CoordinatorConfig::default()
    }
}

async fn local() -> TcpListener {
    TcpListener::bind("127.0.0.1:0").await.unwrap()
}

pub async fn start_coordinator(data_dir: Option<&Path>) -> CoordinatorHandle {
    coordinator::start(coordinator_config(data_dir), local().await, local().await)
        .await
        .unwrap()
}

pub fn agent_config(coordinator: Option<String>) -> AgentConfig {
    AgentConfig {
        coordinator,
        token: Some(AGENT_TOKEN.into()),
        session_tokens: vec!["tok-tess".into()],
        heartbeat_interval_s: 0.2,
        ..AgentConfig::reference()
    }
}

pub async fn start_agent(config: AgentConfig, realtime: bool) -> AgentHandle {
    let opts = AgentOptions {
        realtime,
        ..AgentOptions::default()
    };
    agent::start(config, opts, local().await, local().await, local().await)
        .await
        .unwrap()
}

pub fn vp_manifest(endpoint: &str) -> VantagePointManifest {
    serde_json::from_value(json!({
        "vp_id": "node1",
        "endpoint": endpoint,
        "allowlisted_ips": ["127.0.0.1"],
        "devices": [reference_device()],
        "agent_token": AGENT_TOKEN,
    }))
    .unwrap()
}

pub fn client(c: &CoordinatorHandle, token: &str) -> Client {
    Client::new(&c.http_addr().to_string(), token)
}

/// Runs blocking client calls from a multi-threaded test runtime.
pub fn blocking<T>(f: impl FnOnce() -> T) -> T {
    tokio::task::block_in_place(f)
}

/// Coordinator plus one registered, connected agent.
pub async fn fleet(data_dir: Option<&Path>) -> (CoordinatorHandle, AgentHandle) {
    let c = start_coordinator(data_dir).await;
    let a = start_agent(agent_config(Some(c.agent_addr().to_string())), false).await;
    let endpoint = a.control_addr().to_string();
    let admin = client(&c, "tok-admin");
    blocking(|| admin.register(&vp_manifest(&endpoint))).unwrap();
    assert!(a.wait_connected(Duration::from_secs(10)).await, "agent never connected");
    (c, a)
}

pub fn video_manifest(duration_s: f64, repetitions: u32) -> serde_json::Value {
    json!({
        "constraints": {"device_id": "j7duo"},
        "script": [
            {"cmd": "launch_app", "app": "video"},
            {"cmd": "play_video", "duration_s": duration_s + 10.0}
        ],
        "duration_s": duration_s,
        "repetitions": repetitions,
        "voltage": 3.85,
        "seed": 7
    })
}

pub async fn wait_for<F: FnMut() -> bool>(timeout: Duration, mut f: F) -> bool {
    let deadline = tokio::time::Instant::now() + timeout;
    while tokio::time::Instant::now() < deadline {
        if f() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    f()
}
