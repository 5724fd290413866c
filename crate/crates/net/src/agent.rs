//! Vantage-point agent process: keeps a connection to the coordinator,
//! runs dispatched jobs, answers proxied API calls and serves mirroring
//! sessions. The simulated hardware runs on the agent's virtual clock,
//! which a driver task keeps in step with the wall clock between jobs.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use powerbench_core::agent::{Agent, AgentConfig, HealthReport, Outcome};
use powerbench_core::coordinator::{JobManifest, JobStatus};
use powerbench_core::protocol::{bundle_chunks, ApiFailure, Message};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch, Mutex};
use tokio::task::JoinHandle;

use crate::codec::{read_frame, write_frame};
use crate::session;

const RECONNECT_DELAY: Duration = Duration::from_secs(1);
const HELLO_TIMEOUT: Duration = Duration::from_secs(10);
/// Largest jump the clock driver makes at once, e.g. after a long job.
const MAX_CATCH_UP: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Default)]
pub struct AgentOptions {
    /// Overrides the coordinator address from the config.
    pub coordinator: Option<String>,
    /// Advance the virtual clock with the wall clock while idle.
    pub realtime: bool,
    /// Console build served under `/console/` on the session HTTP port.
    pub static_dir: Option<PathBuf>,
}

pub(crate) struct AgentShared {
    pub agent: Mutex<Agent>,
    /// Last health report, for heartbeats sent while a job holds the agent.
    cached_health: std::sync::Mutex<HealthReport>,
    pub session_tokens: Vec<String>,
    outbox: std::sync::Mutex<Outbox>,
}

/// Messages for the coordinator. Anything sent while disconnected waits
/// for the next connection, so a job finishing during an outage still
/// reports.
#[derive(Default)]
struct Outbox {
    tx: Option<mpsc::UnboundedSender<Message>>,
    pending: Vec<Message>,
}

impl AgentShared {
    pub fn token_ok(&self, token: Option<&str>) -> bool {
        token.is_some_and(|t| self.session_tokens.iter().any(|s| s == t))
    }

    async fn health(&self) -> HealthReport {
        match self.agent.try_lock() {
            Ok(a) => {
                let h = a.healthcheck();
                *self.cached_health.lock().expect("health lock poisoned") = h.clone();
                h
            }
            Err(_) => self.cached_health.lock().expect("health lock poisoned").clone(),
        }
    }

    fn send(&self, msg: Message) {
        let mut out = self.outbox.lock().expect("outbox lock poisoned");
        let msg = match &out.tx {
            Some(tx) => match tx.send(msg) {
                Ok(()) => return,
                Err(e) => e.0,
            },
            None => msg,
        };
        out.tx = None;
        out.pending.push(msg);
    }

    fn attach(&self, tx: mpsc::UnboundedSender<Message>) {
        let mut out = self.outbox.lock().expect("outbox lock poisoned");
        for msg in out.pending.drain(..) {
            let _ = tx.send(msg);
        }
        out.tx = Some(tx);
    }

    fn detach(&self) {
        self.outbox.lock().expect("outbox lock poisoned").tx = None;
    }

    fn mark_busy(&self, device_id: &str, job_id: u64) {
        let mut h = self.cached_health.lock().expect("health lock poisoned");
        for d in h.devices.iter_mut().filter(|d| d.device_id == device_id) {
            d.busy = true;
            d.job_id = Some(job_id);
        }
    }
}

pub struct AgentHandle {
    shared: Arc<AgentShared>,
    control_addr: SocketAddr,
    session_addr: SocketAddr,
    console_addr: SocketAddr,
    stop: watch::Sender<bool>,
    connected: watch::Receiver<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl AgentHandle {
    pub fn control_addr(&self) -> SocketAddr {
        self.control_addr
    }

    pub fn session_addr(&self) -> SocketAddr {
        self.session_addr
    }

    pub fn console_addr(&self) -> SocketAddr {
        self.console_addr
    }

    /// Runs `f` with exclusive access to the agent.
    pub async fn with_agent<T>(&self, f: impl FnOnce(&mut Agent) -> T) -> T {
        f(&mut *self.shared.agent.lock().await)
    }

    /// Waits until the coordinator has accepted this agent's HELLO.
    pub async fn wait_connected(&self, timeout: Duration) -> bool {
        let mut rx = self.connected.clone();
        let connected = tokio::time::timeout(timeout, rx.wait_for(|c| *c)).await;
        matches!(connected, Ok(Ok(_)))
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            t.abort();
            let _ = t.await;
        }
    }

    pub async fn wait(self) {
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

/// Binds the configured ports on all interfaces and starts the agent.
pub async fn serve(config: AgentConfig, opts: AgentOptions) -> std::io::Result<AgentHandle> {
    let control = TcpListener::bind(("0.0.0.0", config.ports.control)).await?;
    let http = TcpListener::bind(("0.0.0.0", config.ports.session_http)).await?;
    let console = TcpListener::bind(("0.0.0.0", config.ports.console_stream)).await?;
    start(config, opts, control, http, console).await
}

pub async fn start(
    config: AgentConfig,
    opts: AgentOptions,
    control: TcpListener,
    http: TcpListener,
    console: TcpListener,
) -> std::io::Result<AgentHandle> {
    let coordinator = opts.coordinator.clone().or_else(|| config.coordinator.clone());
    let token = config.token.clone().unwrap_or_default();
    let heartbeat = Duration::from_secs_f64(config.heartbeat_interval_s.max(0.01));
    let frame_period = Duration::from_secs_f64(config.session.frame_period());
    let session_tokens = config.session_tokens.clone();
    let agent = Agent::new(config).map_err(std::io::Error::other)?;
    let vp_id = agent.vp_id().to_string();
    let shared = Arc::new(AgentShared {
        cached_health: std::sync::Mutex::new(agent.healthcheck()),
        agent: Mutex::new(agent),
        session_tokens,
        outbox: std::sync::Mutex::new(Outbox::default()),
    });
    let (stop, stop_rx) = watch::channel(false);
    let (connected_tx, connected) = watch::channel(false);
    let control_addr = control.local_addr()?;
    let session_addr = http.local_addr()?;
    let console_addr = console.local_addr()?;

    let mut tasks = vec![
        tokio::spawn(control_listener(control, vp_id.clone(), stop_rx.clone())),
        tokio::spawn(session::serve_http(shared.clone(), http, opts.static_dir.clone(), stop_rx.clone())),
        tokio::spawn(session::serve_console(shared.clone(), console, stop_rx.clone())),
    ];
    if opts.realtime {
        tasks.push(tokio::spawn(drive_clock(shared.clone(), frame_period, stop_rx.clone())));
    }
    match coordinator {
        Some(addr) => tasks.push(tokio::spawn(coordinator_link(
            shared.clone(),
            addr,
            vp_id,
            token,
            heartbeat,
            connected_tx,
            stop_rx,
        ))),
        None => tracing::warn!("no coordinator configured; serving sessions only"),
    }
    Ok(AgentHandle {
        shared,
        control_addr,
        session_addr,
        console_addr,
        stop,
        connected,
        tasks,
    })
}

/// The control port answers every connection with a HELLO naming this
/// vantage point, which is what the coordinator's reachability probe and
/// operators see.
async fn control_listener(listener: TcpListener, vp_id: String, mut stop: watch::Receiver<bool>) {
    loop {
        let mut stream = tokio::select! {
            r = listener.accept() => match r {
                Ok((s, _)) => s,
                Err(_) => continue,
            },
            _ = stop.wait_for(|s| *s) => break,
        };
        let hello = Message::Hello {
            vp_id: vp_id.clone(),
            token: String::new(),
        };
        tokio::spawn(async move {
            let _ = write_frame(&mut stream, &hello).await;
        });
    }
}

async fn drive_clock(shared: Arc<AgentShared>, period: Duration, mut stop: watch::Receiver<bool>) {
    let mut last = Instant::now();
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        tokio::select! {
            _ = ticker.tick() => {}
            _ = stop.wait_for(|s| *s) => break,
        }
        let Ok(mut agent) = shared.agent.try_lock() else {
            // A job owns the clock; resume from now once it is done.
            last = Instant::now();
            continue;
        };
        let now = Instant::now();
        let dt = now.duration_since(last).min(MAX_CATCH_UP);
        last = now;
        agent.advance(dt.as_secs_f64());
    }
}

async fn coordinator_link(
    shared: Arc<AgentShared>,
    addr: String,
    vp_id: String,
    token: String,
    heartbeat: Duration,
    connected: watch::Sender<bool>,
    mut stop: watch::Receiver<bool>,
) {
    loop {
        let r = tokio::select! {
            r = run_link(&shared, &addr, &vp_id, &token, heartbeat, &connected) => r,
            _ = stop.wait_for(|s| *s) => break,
        };
        let _ = connected.send(false);
        match r {
            Ok(()) => tracing::info!("coordinator closed the connection"),
            Err(e) => tracing::warn!("coordinator link: {e}"),
        }
        tokio::select! {
            _ = tokio::time::sleep(RECONNECT_DELAY) => {}
            _ = stop.wait_for(|s| *s) => break,
        }
    }
}

async fn run_link(
    shared: &Arc<AgentShared>,
    addr: &str,
    vp_id: &str,
    token: &str,
    heartbeat: Duration,
    connected: &watch::Sender<bool>,
) -> std::io::Result<()> {
    let stream = TcpStream::connect(addr).await?;
    let (mut rd, mut wr) = stream.into_split();
    write_frame(
        &mut wr,
        &Message::Hello {
            vp_id: vp_id.to_string(),
            token: token.to_string(),
        },
    )
    .await?;
    match tokio::time::timeout(HELLO_TIMEOUT, read_frame(&mut rd)).await {
        Ok(Ok(Some(Message::Hello { vp_id: echoed, .. }))) if echoed == vp_id => {}
        Ok(Ok(None)) => return Err(std::io::Error::other("coordinator refused HELLO")),
        Ok(Err(e)) => return Err(e),
        Ok(Ok(Some(_))) => return Err(std::io::Error::other("unexpected reply to HELLO")),
        Err(_) => return Err(std::io::Error::other("no reply to HELLO")),
    }
    tracing::info!(addr, "connected to coordinator");
    let _ = connected.send(true);

    let (tx, mut rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            if write_frame(&mut wr, &msg).await.is_err() {
                break;
            }
        }
    });
    shared.attach(tx.clone());
    let beats = {
        let shared = shared.clone();
        let vp_id = vp_id.to_string();
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(heartbeat);
            loop {
                ticker.tick().await;
                let health = shared.health().await;
                let msg = Message::Heartbeat {
                    vp_id: vp_id.clone(),
                    health: Some(health),
                };
                if tx.send(msg).is_err() {
                    break;
                }
            }
        })
    };

    let link = LinkGuard {
        shared,
        tasks: vec![beats, writer],
    };
    let result = loop {
        match read_frame(&mut rd).await {
            Ok(Some(msg)) => handle_message(shared, msg),
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    drop(link);
    result
}

/// Tears down a link's helper tasks even when the link future itself is aborted.
struct LinkGuard<'a> {
    shared: &'a AgentShared,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

impl Drop for LinkGuard<'_> {
    fn drop(&mut self) {
        self.shared.detach();
        for t in &self.tasks {
            t.abort();
        }
    }
}

fn handle_message(shared: &Arc<AgentShared>, msg: Message) {
    match msg {
        Message::Dispatch {
            job_id,
            device_id,
            manifest,
        } => {
            shared.mark_busy(&device_id, job_id);
            tokio::spawn(run_job(shared.clone(), job_id, device_id, manifest));
        }
        Message::ApiProxy {
            request_id,
            call: Some(call),
            ..
        } => {
            let shared = shared.clone();
            tokio::spawn(async move {
                let r = shared.agent.lock().await.api_call(call);
                let (result, error) = match r {
                    Ok(res) => (Some(res), None),
                    Err(e) => (
                        None,
                        Some(ApiFailure {
                            code: e.code().to_string(),
                            message: e.to_string(),
                        }),
                    ),
                };
                shared.send(Message::ApiProxy {
                    request_id,
                    call: None,
                    result,
                    error,
                });
            });
        }
        other => tracing::warn!(kind = other.kind(), "unexpected message from coordinator"),
    }
}

async fn run_job(
    shared: Arc<AgentShared>,
    job_id: u64,
    device_id: String,
    manifest: JobManifest,
) {
    shared.send(Message::Status {
        job_id,
        status: JobStatus::Running,
        reason: None,
    });
    let result = {
        let shared = shared.clone();
        tokio::task::spawn_blocking(move || {
            let mut agent = shared.agent.blocking_lock();
            let r = agent.handle_dispatch(job_id, &manifest, &device_id);
            *shared.cached_health.lock().expect("health lock poisoned") = agent.healthcheck();
            r
        })
        .await
    };
    let (status, reason, chunks) = match result {
        Ok(r) => {
            let chunks = bundle_chunks(job_id, &r.bundle);
            match r.record.outcome {
                Outcome::Done => (JobStatus::Done, None, chunks),
                Outcome::Failed { code, reason } => {
                    (JobStatus::Failed, Some(format!("{code}: {reason}")), chunks)
                }
            }
        }
        Err(e) => (JobStatus::Failed, Some(format!("agent task failed: {e}")), Vec::new()),
    };
    tracing::info!(job = job_id, ?status, "job finished");
    for c in chunks {
        shared.send(c);
    }
    shared.send(Message::Status {
        job_id,
        status,
        reason,
    });
}
