//! Coordinator service: the agent listener, the scheduling loop and the
//! experimenter HTTP API around one [`Coordinator`] state machine.

use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{ConnectInfo, Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use powerbench_core::agent::{ApiCall, ApiResult};
use powerbench_core::coordinator::{
    Action, CoordError, Coordinator, CoordinatorConfig, JobManifest, JobStatus, Resource, Role,
    VantagePointManifest,
};
use powerbench_core::protocol::{ApiFailure, BundleAssembler, Message};
use serde::de::DeserializeOwned;
use serde_json::json;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, watch, Notify};
use tokio::task::JoinHandle;

use crate::codec::{read_frame, write_frame};
use crate::unix_now;

/// How long a new connection has to say HELLO.
const HELLO_TIMEOUT: Duration = Duration::from_secs(10);
/// How long an API_PROXY call may take on the agent.
const PROXY_TIMEOUT: Duration = Duration::from_secs(60);
const PROBE_TIMEOUT: Duration = Duration::from_secs(3);

struct AgentLink {
    conn: u64,
    tx: mpsc::UnboundedSender<Message>,
}

type ProxyReply = Result<ApiResult, ApiFailure>;

struct Shared {
    coord: Mutex<Coordinator>,
    links: Mutex<HashMap<String, AgentLink>>,
    proxies: Mutex<HashMap<u64, oneshot::Sender<ProxyReply>>>,
    next_id: AtomicU64,
    kick: Notify,
}

impl Shared {
    fn coord(&self) -> std::sync::MutexGuard<'_, Coordinator> {
        self.coord.lock().expect("coordinator lock poisoned")
    }

    /// One scheduling tick: liveness sweep, then dispatch to connected
    /// agents. Jobs for agents that are not connected go back to the queue.
    fn tick(&self) {
        let now = unix_now();
        let mut coord = self.coord();
        match coord.check_liveness(now) {
            Ok(ch) => {
                for vp in ch.went_offline {
                    tracing::warn!(vp, "vantage point offline");
                }
                for job in ch.failed_jobs {
                    tracing::warn!(job, "job failed with its vantage point");
                }
            }
            Err(e) => tracing::error!("liveness sweep: {e}"),
        }
        let dispatches = match coord.schedule(now) {
            Ok(d) => d,
            Err(e) => {
                tracing::error!("schedule: {e}");
                return;
            }
        };
        let links = self.links.lock().expect("links lock poisoned");
        for d in dispatches {
            let manifest = coord.job(d.job_id).expect("just dispatched").manifest.clone();
            let sent = links.get(&d.vp_id).is_some_and(|l| {
                l.tx.send(Message::Dispatch {
                    job_id: d.job_id,
                    device_id: d.device_id.clone(),
                    manifest,
                })
                .is_ok()
            });
            if sent {
                tracing::info!(job = d.job_id, vp = d.vp_id, device = d.device_id, "dispatched");
            } else if let Err(e) = coord.requeue(d.job_id) {
                tracing::error!("requeue {}: {e}", d.job_id);
            }
        }
    }
}

/// A running coordinator. Dropping the handle leaves the tasks running;
/// call [`CoordinatorHandle::shutdown`] to stop them.
pub struct CoordinatorHandle {
    shared: Arc<Shared>,
    agent_addr: SocketAddr,
    http_addr: SocketAddr,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl CoordinatorHandle {
    pub fn agent_addr(&self) -> SocketAddr {
        self.agent_addr
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http_addr
    }

    /// Runs `f` against the state machine, e.g. to inspect jobs in tests.
    pub fn with_state<T>(&self, f: impl FnOnce(&mut Coordinator) -> T) -> T {
        f(&mut self.shared.coord())
    }

    /// Requests an immediate scheduling tick.
    pub fn kick(&self) {
        self.shared.kick.notify_one();
    }

    pub fn connected_agents(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .shared
            .links
            .lock()
            .expect("links lock poisoned")
            .keys()
            .cloned()
            .collect();
        v.sort();
        v
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            t.abort();
            let _ = t.await;
        }
    }

    /// Waits until a stop is requested elsewhere (never, for the CLI).
    pub async fn wait(self) {
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

/// Binds the ports from `config` on all interfaces and starts serving.
pub async fn serve(config: CoordinatorConfig) -> std::io::Result<CoordinatorHandle> {
    let agents = TcpListener::bind(("0.0.0.0", config.agent_port)).await?;
    let http = TcpListener::bind(("0.0.0.0", config.http_port)).await?;
    start(config, agents, http).await
}

/// Starts the coordinator on already-bound listeners, replaying the journal
/// if a data directory is configured.
pub async fn start(
    config: CoordinatorConfig,
    agents: TcpListener,
    http: TcpListener,
) -> std::io::Result<CoordinatorHandle> {
    let period = Duration::from_secs_f64(config.schedule_period_s.max(0.01));
    let coord = Coordinator::open(config, unix_now()).map_err(std::io::Error::other)?;
    let shared = Arc::new(Shared {
        coord: Mutex::new(coord),
        links: Mutex::new(HashMap::new()),
        proxies: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(1),
        kick: Notify::new(),
    });
    let (stop, stop_rx) = watch::channel(false);
    let agent_addr = agents.local_addr()?;
    let http_addr = http.local_addr()?;

    let mut tasks = Vec::new();
    tasks.push(tokio::spawn(accept_agents(shared.clone(), agents, stop_rx.clone())));

    let app = router(shared.clone());
    let mut http_stop = stop_rx.clone();
    tasks.push(tokio::spawn(async move {
        let server = axum::serve(
            http,
            app.into_make_service_with_connect_info::<SocketAddr>(),
        )
        .with_graceful_shutdown(async move {
            let _ = http_stop.wait_for(|s| *s).await;
        });
        if let Err(e) = server.await {
            tracing::error!("http server: {e}");
        }
    }));

    let sched = shared.clone();
    let mut sched_stop = stop_rx;
    tasks.push(tokio::spawn(async move {
        loop {
            tokio::select! {
                _ = tokio::time::sleep(period) => {}
                _ = sched.kick.notified() => {}
                _ = sched_stop.wait_for(|s| *s) => break,
            }
            sched.tick();
        }
    }));

    Ok(CoordinatorHandle {
        shared,
        agent_addr,
        http_addr,
        stop,
        tasks,
    })
}

async fn accept_agents(shared: Arc<Shared>, listener: TcpListener, mut stop: watch::Receiver<bool>) {
    loop {
        let (stream, peer) = tokio::select! {
            r = listener.accept() => match r {
                Ok(x) => x,
                Err(e) => {
                    tracing::warn!("accept: {e}");
                    continue;
                }
            },
            _ = stop.wait_for(|s| *s) => break,
        };
        // Checked before a single byte is read from the peer.
        if !shared.coord().ip_allowed(peer.ip()) {
            tracing::warn!(%peer, "connection from an address not on any allowlist");
            drop(stream);
            continue;
        }
        let shared = shared.clone();
        let stop = stop.clone();
        tokio::spawn(async move {
            if let Err(e) = agent_connection(shared, stream, peer.ip(), stop).await {
                tracing::info!(%peer, "agent connection ended: {e}");
            }
        });
    }
}

async fn agent_connection(
    shared: Arc<Shared>,
    stream: TcpStream,
    ip: IpAddr,
    mut stop: watch::Receiver<bool>,
) -> std::io::Result<()> {
    let (mut rd, mut wr) = stream.into_split();
    let hello = tokio::time::timeout(HELLO_TIMEOUT, read_frame(&mut rd))
        .await
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::TimedOut, "no HELLO"))??;
    let Some(Message::Hello { vp_id, token }) = hello else {
        return Err(std::io::Error::other("first message was not HELLO"));
    };
    {
        let mut coord = shared.coord();
        coord
            .authenticate_agent(&vp_id, &token, ip)
            .map_err(std::io::Error::other)?;
        coord
            .heartbeat(&vp_id, None, unix_now())
            .map_err(std::io::Error::other)?;
    }
    write_frame(
        &mut wr,
        &Message::Hello {
            vp_id: vp_id.clone(),
            token: String::new(),
        },
    )
    .await?;
    tracing::info!(vp = vp_id, %ip, "agent connected");

    let (tx, mut rx) = mpsc::unbounded_channel::<Message>();
    let conn = shared.next_id.fetch_add(1, Ordering::Relaxed);
    shared
        .links
        .lock()
        .expect("links lock poisoned")
        .insert(vp_id.clone(), AgentLink { conn, tx });
    let writer = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            if write_frame(&mut wr, &msg).await.is_err() {
                break;
            }
        }
    });
    shared.kick.notify_one();

    let mut assemblers: HashMap<u64, BundleAssembler> = HashMap::new();
    let result = loop {
        let msg = tokio::select! {
            m = read_frame(&mut rd) => m,
            _ = stop.wait_for(|s| *s) => break Ok(()),
        };
        let msg = match msg {
            Ok(Some(m)) => m,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        };
        handle_agent_message(&shared, &vp_id, msg, &mut assemblers);
    };

    {
        let mut links = shared.links.lock().expect("links lock poisoned");
        if links.get(&vp_id).is_some_and(|l| l.conn == conn) {
            links.remove(&vp_id);
        }
    }
    writer.abort();
    result
}

fn handle_agent_message(
    shared: &Shared,
    vp_id: &str,
    msg: Message,
    assemblers: &mut HashMap<u64, BundleAssembler>,
) {
    let now = unix_now();
    match msg {
        Message::Heartbeat { health, .. } => {
            if let Err(e) = shared.coord().heartbeat(vp_id, health.as_ref(), now) {
                tracing::warn!(vp = vp_id, "heartbeat: {e}");
            }
            shared.kick.notify_one();
        }
        Message::ArtifactChunk {
            job_id,
            name,
            offset,
            total,
            data,
        } => {
            let asm = assemblers.entry(job_id).or_default();
            if let Err(e) = asm.push(&name, offset, total, &data) {
                tracing::warn!(job = job_id, "bad artifact chunk: {e}");
                assemblers.remove(&job_id);
            }
        }
        Message::Status {
            job_id,
            status,
            reason,
        } => {
            let (status, reason, bundle) = if status.is_terminal() {
                match assemblers.remove(&job_id).map(BundleAssembler::finish) {
                    Some(Ok(b)) => (status, reason, Some(b)),
                    Some(Err(e)) => (
                        JobStatus::Failed,
                        Some(format!("artifact transfer failed: {e}")),
                        None,
                    ),
                    None => (status, reason, None),
                }
            } else {
                (status, reason, None)
            };
            let r = shared
                .coord()
                .report_status(vp_id, job_id, status, reason, bundle, now);
            match r {
                Ok(()) => tracing::info!(job = job_id, ?status, "status"),
                Err(e) => tracing::warn!(job = job_id, "status report rejected: {e}"),
            }
            shared.kick.notify_one();
        }
        Message::ApiProxy {
            request_id,
            result,
            error,
            ..
        } => {
            let waiter = shared
                .proxies
                .lock()
                .expect("proxy lock poisoned")
                .remove(&request_id);
            if let Some(w) = waiter {
                let reply = match (result, error) {
                    (Some(r), _) => Ok(r),
                    (None, Some(e)) => Err(e),
                    (None, None) => Err(ApiFailure {
                        code: "EmptyReply".into(),
                        message: "agent sent neither result nor error".into(),
                    }),
                };
                let _ = w.send(reply);
            }
        }
        other => tracing::warn!(vp = vp_id, kind = other.kind(), "unexpected message"),
    }
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(get_job).delete(cancel_job))
        .route("/jobs/{id}/artifacts", get(get_artifacts))
        .route("/devices", get(list_devices))
        .route("/vantage-points", post(register_vp))
        .route("/vantage-points/{vp_id}/api", post(proxy_api))
        .with_state(shared)
}

/// JSON error body: `{"code": ..., "message": ...}`.
pub(crate) fn error_response(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(ApiFailure {
            code: code.to_string(),
            message: message.into(),
        }),
    )
        .into_response()
}

fn coord_error(shared: &Shared, token: &str, e: CoordError) -> Response {
    let status = match &e {
        CoordError::Unauthorized if shared.coord().authorizer().principal(token).is_none() => {
            StatusCode::UNAUTHORIZED
        }
        CoordError::Unauthorized => StatusCode::FORBIDDEN,
        CoordError::DuplicateId(_) | CoordError::IllegalTransition { .. } => StatusCode::CONFLICT,
        CoordError::InvalidManifest { .. } => StatusCode::BAD_REQUEST,
        CoordError::NoMatchingDevice => StatusCode::UNPROCESSABLE_ENTITY,
        CoordError::UnknownJob(_) | CoordError::UnknownVantagePoint(_) => StatusCode::NOT_FOUND,
        CoordError::NotReady => StatusCode::CONFLICT,
        CoordError::Expired => StatusCode::GONE,
        CoordError::Unreachable(_) => StatusCode::BAD_GATEWAY,
        CoordError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    let message = match &e {
        CoordError::InvalidManifest { field, .. } => format!("{field}: {e}"),
        _ => e.to_string(),
    };
    error_response(status, e.code(), message)
}

pub(crate) fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_string())
}

fn require_token(headers: &HeaderMap) -> Result<String, Response> {
    bearer(headers).ok_or_else(|| {
        error_response(StatusCode::UNAUTHORIZED, "Unauthorized", "missing bearer token")
    })
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| {
        error_response(StatusCode::BAD_REQUEST, "BadRequest", e.to_string())
    })
}

async fn submit_job(State(s): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> Response {
    let token = match require_token(&headers) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let manifest: JobManifest = match parse_body(&body) {
        Ok(m) => m,
        Err(r) => return r,
    };
    let r = s.coord().submit_job(manifest, &token, unix_now());
    match r {
        Ok(job_id) => {
            s.kick.notify_one();
            (StatusCode::CREATED, Json(json!({ "job_id": job_id }))).into_response()
        }
        Err(e) => coord_error(&s, &token, e),
    }
}

async fn get_job(State(s): State<Arc<Shared>>, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    let token = match require_token(&headers) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let r = s.coord().get_job(id, &token).cloned();
    match r {
        Ok(job) => Json(job).into_response(),
        Err(e) => coord_error(&s, &token, e),
    }
}

async fn cancel_job(State(s): State<Arc<Shared>>, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    let token = match require_token(&headers) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let r = s.coord().cancel_job(id, &token);
    match r {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => coord_error(&s, &token, e),
    }
}

async fn get_artifacts(State(s): State<Arc<Shared>>, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    let token = match require_token(&headers) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let r = s.coord().fetch_artifacts(id, &token, unix_now());
    match r {
        Ok(bundle) => Json(bundle).into_response(),
        Err(e) => coord_error(&s, &token, e),
    }
}

async fn list_devices(State(s): State<Arc<Shared>>, headers: HeaderMap) -> Response {
    let token = match require_token(&headers) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let r = s.coord().list_devices(&token);
    match r {
        Ok(devices) => Json(devices).into_response(),
        Err(e) => coord_error(&s, &token, e),
    }
}

async fn register_vp(
    State(s): State<Arc<Shared>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let token = match require_token(&headers) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let manifest: VantagePointManifest = match parse_body(&body) {
        Ok(m) => m,
        Err(r) => return r,
    };
    // Only admins get to make the coordinator dial out.
    let allowed = s
        .coord()
        .authorize(&token, Action::RegisterVantagePoint, Resource::none());
    if allowed != powerbench_core::coordinator::Decision::Allow {
        return coord_error(&s, &token, CoordError::Unauthorized);
    }
    let reachable = matches!(
        tokio::time::timeout(PROBE_TIMEOUT, TcpStream::connect(manifest.endpoint.as_str())).await,
        Ok(Ok(_))
    );
    let r = s
        .coord()
        .register_vantage_point(manifest, &token, peer.ip(), |_| reachable, unix_now());
    match r {
        Ok(vp_id) => (StatusCode::CREATED, Json(json!({ "vp_id": vp_id }))).into_response(),
        Err(e) => coord_error(&s, &token, e),
    }
}

/// Forwards one controller API call to a connected agent. Admin only: the
/// call bypasses the job queue.
async fn proxy_api(
    State(s): State<Arc<Shared>>,
    headers: HeaderMap,
    Path(vp_id): Path<String>,
    body: Bytes,
) -> Response {
    let token = match require_token(&headers) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let role = s.coord().authorizer().principal(&token).map(|p| p.role);
    match role {
        None => return error_response(StatusCode::UNAUTHORIZED, "Unauthorized", "unknown token"),
        Some(Role::Admin) => {}
        Some(_) => return error_response(StatusCode::FORBIDDEN, "Unauthorized", "admin only"),
    }
    let call: ApiCall = match parse_body(&body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    if s.coord().vantage_point(&vp_id).is_none() {
        return error_response(
            StatusCode::NOT_FOUND,
            "UnknownVantagePoint",
            format!("unknown vantage point {vp_id}"),
        );
    }
    let request_id = s.next_id.fetch_add(1, Ordering::Relaxed);
    let (tx, rx) = oneshot::channel();
    s.proxies
        .lock()
        .expect("proxy lock poisoned")
        .insert(request_id, tx);
    let sent = s
        .links
        .lock()
        .expect("links lock poisoned")
        .get(&vp_id)
        .is_some_and(|l| {
            l.tx.send(Message::ApiProxy {
                request_id,
                call: Some(call),
                result: None,
                error: None,
            })
            .is_ok()
        });
    if !sent {
        s.proxies.lock().expect("proxy lock poisoned").remove(&request_id);
        return error_response(
            StatusCode::SERVICE_UNAVAILABLE,
            "AgentUnavailable",
            format!("{vp_id} is not connected"),
        );
    }
    let reply = tokio::time::timeout(PROXY_TIMEOUT, rx).await;
    s.proxies.lock().expect("proxy lock poisoned").remove(&request_id);
    match reply {
        Ok(Ok(Ok(result))) => Json(result).into_response(),
        Ok(Ok(Err(failure))) => (StatusCode::UNPROCESSABLE_ENTITY, Json(failure)).into_response(),
        Ok(Err(_)) => error_response(StatusCode::BAD_GATEWAY, "AgentUnavailable", "agent went away"),
        Err(_) => error_response(StatusCode::GATEWAY_TIMEOUT, "Timeout", "agent did not answer"),
    }
}
