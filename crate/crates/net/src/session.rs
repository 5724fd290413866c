//! Session endpoints of an agent: HTTP control (open, close, list, probe)
//! and the console WebSocket that streams frames and takes input.
//!
//! Console messages are JSON text frames tagged by `type`. The server sends
//! `TOOLBAR` once on connect, then `FRAME` per tick, `ACK` or `ERROR` per
//! request. The client sends `INPUT` and `TOOLBAR` requests, each with an
//! `id` echoed in the answer.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use powerbench_core::agent::{AgentError, ApiCall, InjectAck};
use powerbench_core::hwsim::{HardwareBackend, MeterState, PowerSource};
use powerbench_core::session::{FrameEvent, SessionError, SessionInput};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tower_http::services::ServeDir;

use crate::agent::AgentShared;
use crate::coordinator::{bearer, error_response};

/// Device and meter state attached to every frame, for the console's
/// status strip and live chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveStatus {
    pub current_ma: f64,
    pub source: PowerSource,
    pub meter: MeterState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServerMessage {
    Toolbar {
        session_id: u64,
        device_id: String,
        enabled: bool,
    },
    Frame {
        #[serde(flatten)]
        frame: FrameEvent,
        status: LiveStatus,
    },
    Ack {
        id: u64,
        ack: InjectAck,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClientMessage {
    Input { id: u64, input: SessionInput },
    Toolbar { id: u64, call: ApiCall },
}

#[derive(Debug, Deserialize)]
struct OpenRequest {
    device_id: String,
    #[serde(default = "yes")]
    toolbar_enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
struct ProbeRequest {
    n: usize,
}

fn agent_error(e: &AgentError) -> Response {
    let status = match e {
        AgentError::UnknownDevice(_) | AgentError::Session(SessionError::UnknownSession(_)) => {
            StatusCode::NOT_FOUND
        }
        AgentError::Session(SessionError::SessionExists(_))
        | AgentError::Session(SessionError::ChannelInfeasible(_))
        | AgentError::ChannelInfeasible(_)
        | AgentError::Busy(_) => StatusCode::CONFLICT,
        AgentError::Session(SessionError::SessionClosed) => StatusCode::GONE,
        AgentError::Session(SessionError::ToolbarHidden) => StatusCode::FORBIDDEN,
        AgentError::Session(SessionError::OutOfBounds)
        | AgentError::Session(SessionError::BadProbeCount) => StatusCode::BAD_REQUEST,
        AgentError::Session(SessionError::Timeout(_)) => StatusCode::GATEWAY_TIMEOUT,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    };
    error_response(status, e.code(), e.to_string())
}

fn authorized(shared: &AgentShared, headers: &HeaderMap) -> Result<(), Response> {
    if shared.token_ok(bearer(headers).as_deref()) {
        Ok(())
    } else {
        Err(error_response(StatusCode::UNAUTHORIZED, "Unauthorized", "bad or missing token"))
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body)
        .map_err(|e| error_response(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()))
}

pub(crate) fn http_router(shared: Arc<AgentShared>, static_dir: Option<PathBuf>) -> Router {
    let mut r = Router::new()
        .route("/sessions", get(list_sessions).post(open_session))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/probe", post(probe))
        .route("/health", get(health))
        .with_state(shared);
    if let Some(dir) = static_dir {
        r = r.nest_service("/console", ServeDir::new(dir));
    }
    r
}

pub(crate) async fn serve_http(
    shared: Arc<AgentShared>,
    listener: TcpListener,
    static_dir: Option<PathBuf>,
    mut stop: watch::Receiver<bool>,
) {
    let app = http_router(shared, static_dir);
    let r = axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            let _ = stop.wait_for(|s| *s).await;
        })
        .await;
    if let Err(e) = r {
        tracing::error!("session http: {e}");
    }
}

async fn list_sessions(State(s): State<Arc<AgentShared>>, headers: HeaderMap) -> Response {
    if let Err(r) = authorized(&s, &headers) {
        return r;
    }
    Json(s.agent.lock().await.sessions()).into_response()
}

async fn open_session(State(s): State<Arc<AgentShared>>, headers: HeaderMap, body: Bytes) -> Response {
    if let Err(r) = authorized(&s, &headers) {
        return r;
    }
    let req: OpenRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let r = s.agent.lock().await.open_session(&req.device_id, req.toolbar_enabled);
    match r {
        Ok(state) => (StatusCode::CREATED, Json(state)).into_response(),
        Err(e) => agent_error(&e),
    }
}

async fn get_session(State(s): State<Arc<AgentShared>>, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    if let Err(r) = authorized(&s, &headers) {
        return r;
    }
    let r = s.agent.lock().await.session(id);
    match r {
        Ok(state) => Json(state).into_response(),
        Err(e) => agent_error(&e),
    }
}

async fn close_session(State(s): State<Arc<AgentShared>>, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    if let Err(r) = authorized(&s, &headers) {
        return r;
    }
    let r = s.agent.lock().await.close_session(id);
    match r {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => agent_error(&e),
    }
}

/// Runs latency probes on the virtual clock; the wall-clock cost is small.
async fn probe(
    State(s): State<Arc<AgentShared>>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> Response {
    if let Err(r) = authorized(&s, &headers) {
        return r;
    }
    let req: ProbeRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let shared = s.clone();
    let r = tokio::task::spawn_blocking(move || shared.agent.blocking_lock().probe_latency(id, req.n)).await;
    match r {
        Ok(Ok(stats)) => Json(stats).into_response(),
        Ok(Err(e)) => agent_error(&e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()),
    }
}

async fn health(State(s): State<Arc<AgentShared>>, headers: HeaderMap) -> Response {
    if let Err(r) = authorized(&s, &headers) {
        return r;
    }
    Json(s.agent.lock().await.healthcheck()).into_response()
}

pub(crate) fn console_router(shared: Arc<AgentShared>) -> Router {
    Router::new()
        .route("/session/{id}", get(console_ws))
        .with_state(shared)
}

pub(crate) async fn serve_console(
    shared: Arc<AgentShared>,
    listener: TcpListener,
    mut stop: watch::Receiver<bool>,
) {
    let r = axum::serve(listener, console_router(shared))
        .with_graceful_shutdown(async move {
            let _ = stop.wait_for(|s| *s).await;
        })
        .await;
    if let Err(e) = r {
        tracing::error!("console stream: {e}");
    }
}

/// Browsers cannot set headers on a WebSocket, so the token may also come
/// as `?token=`.
async fn console_ws(
    State(s): State<Arc<AgentShared>>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    Query(query): Query<HashMap<String, String>>,
    ws: WebSocketUpgrade,
) -> Response {
    let token = bearer(&headers).or_else(|| query.get("token").cloned());
    if !s.token_ok(token.as_deref()) {
        return error_response(StatusCode::UNAUTHORIZED, "Unauthorized", "bad or missing token");
    }
    let subscribed = {
        let mut agent = s.agent.lock().await;
        agent
            .subscribe(id)
            .and_then(|client| Ok((client, agent.session(id)?)))
    };
    let (client, state) = match subscribed {
        Ok(x) => x,
        Err(e) => return agent_error(&e),
    };
    ws.on_upgrade(move |socket| async move {
        let greeting = ServerMessage::Toolbar {
            session_id: id,
            device_id: state.device_id.clone(),
            enabled: state.toolbar_enabled,
        };
        console_loop(s.clone(), socket, id, client, state.device_id, greeting).await;
        s.agent.lock().await.unsubscribe(id, client);
    })
}

fn text(msg: &ServerMessage) -> WsMessage {
    WsMessage::Text(serde_json::to_string(msg).expect("server messages serialize").into())
}

async fn console_loop(
    shared: Arc<AgentShared>,
    socket: WebSocket,
    session_id: u64,
    client: u64,
    device_id: String,
    greeting: ServerMessage,
) {
    let (mut tx, mut rx) = socket.split();
    if tx.send(text(&greeting)).await.is_err() {
        return;
    }
    let period = {
        let agent = shared.agent.lock().await;
        Duration::from_secs_f64(agent.config().session.frame_period())
    };
    let mut ticker = tokio::time::interval(period);
    loop {
        tokio::select! {
            _ = ticker.tick() => {
                let out = drain_frames(&shared, session_id, client, &device_id).await;
                let fatal = matches!(out.last(), Some(ServerMessage::Error { .. }));
                for m in &out {
                    if tx.send(text(m)).await.is_err() {
                        return;
                    }
                }
                if fatal {
                    let _ = tx.send(WsMessage::Close(None)).await;
                    return;
                }
            }
            incoming = rx.next() => {
                let Some(Ok(msg)) = incoming else { return };
                let body = match msg {
                    WsMessage::Text(t) => t.to_string(),
                    WsMessage::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                    WsMessage::Close(_) => return,
                    _ => continue,
                };
                let reply = handle_client(&shared, session_id, &body).await;
                if tx.send(text(&reply)).await.is_err() {
                    return;
                }
            }
        }
    }
}

/// Frames queued for this client, with the current device status. Ends
/// with an `ERROR` when the session closed or the client fell behind.
async fn drain_frames(
    shared: &AgentShared,
    session_id: u64,
    client: u64,
    device_id: &str,
) -> Vec<ServerMessage> {
    let mut agent = shared.agent.lock().await;
    let mut out = Vec::new();
    loop {
        match agent.poll_frame(session_id, client) {
            Ok(Some(frame)) => {
                let status = LiveStatus {
                    current_ma: agent.device(device_id).map_or(0.0, |d| d.mean_current_ma()),
                    source: agent
                        .hardware()
                        .relays()
                        .source(device_id)
                        .unwrap_or(PowerSource::Battery),
                    meter: agent.hardware().meter(),
                };
                out.push(ServerMessage::Frame { frame, status });
            }
            Ok(None) => break,
            Err(e) => {
                out.push(ServerMessage::Error {
                    id: None,
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    out
}

async fn handle_client(shared: &AgentShared, session_id: u64, body: &str) -> ServerMessage {
    let msg: ClientMessage = match serde_json::from_str(body) {
        Ok(m) => m,
        Err(e) => {
            return ServerMessage::Error {
                id: None,
                code: "BadRequest".into(),
                message: e.to_string(),
            }
        }
    };
    let (id, input) = match msg {
        ClientMessage::Input { id, input } => (id, input),
        ClientMessage::Toolbar { id, call } => (id, SessionInput::Toolbar { call }),
    };
    let r = shared.agent.lock().await.inject(session_id, input);
    match r {
        Ok(ack) => ServerMessage::Ack { id, ack },
        Err(e) => ServerMessage::Error {
            id: Some(id),
            code: e.code().to_string(),
            message: e.to_string(),
        },
    }
}
