//! Serve mode: one thread owns the `World` and advances it in paced real
//! time; HTTP, WebSocket and wire handlers talk to it only through jobs.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use hearth_core::camera::{CameraAction, Quality};
use hearth_core::client::ClientError;
use hearth_core::gateway::GatewayError;
use hearth_core::home::{PanelEvent, RunPhase, World};
use hearth_core::scenario::{ActionSpec, Scenario};
use hearth_core::sim::SimTime;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot};

use crate::error::{io_err, CliError};
use crate::wire;

const TICK: Duration = Duration::from_millis(10);
const EVENT_BUFFER: usize = 4096;

pub struct ServeOptions {
    pub scenario: Scenario,
    pub bind: SocketAddr,
    pub wire_bind: SocketAddr,
    pub speed: f64,
    pub client: Option<String>,
    pub trace: Option<PathBuf>,
}

type Job = Box<dyn FnOnce(&mut World) + Send>;

enum Msg {
    Job(Job),
    Shutdown(oneshot::Sender<Result<(), CliError>>),
}

/// Cheap handle for request handlers.
#[derive(Clone)]
pub struct Sim {
    tx: mpsc::Sender<Msg>,
    pub events: broadcast::Sender<PanelEvent>,
    pub client: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    Conflict(String),
    #[error("simulation stopped")]
    Stopped,
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let msg = e.to_string();
        match e {
            GatewayError::Forbidden => ApiError::Forbidden(msg),
            GatewayError::AuthFailed { .. } | GatewayError::Integrity => ApiError::Unauthorized(msg),
            GatewayError::BadKey(_) | GatewayError::UnknownDevice(_) => ApiError::NotFound(msg),
            GatewayError::BadValue { .. } => ApiError::BadRequest(msg),
            _ => ApiError::Conflict(msg),
        }
    }
}

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::NotLoggedIn => ApiError::Unauthorized(e.to_string()),
            _ => ApiError::Conflict(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Stopped => StatusCode::SERVICE_UNAVAILABLE,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

impl Sim {
    /// Runs `f` on the simulation thread between events.
    pub async fn call<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut World) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |w| {
            let _ = tx.send(f(w));
        });
        self.tx.send(Msg::Job(job)).map_err(|_| ApiError::Stopped)?;
        rx.await.map_err(|_| ApiError::Stopped)
    }

    async fn shutdown(&self) -> Result<(), CliError> {
        let (tx, rx) = oneshot::channel();
        if self.tx.send(Msg::Shutdown(tx)).is_err() {
            return Ok(());
        }
        rx.await.unwrap_or(Ok(()))
    }
}

/// JSON shape of a panel event on the wire: `{t, kind, payload}`, `t` in
/// simulated seconds.
pub fn event_json(ev: &PanelEvent) -> Value {
    json!({ "t": ev.t.as_secs_f64(), "kind": ev.kind, "payload": ev.payload })
}

fn own(mut world: World, rx: mpsc::Receiver<Msg>, events: broadcast::Sender<PanelEvent>, speed: f64, trace: Option<PathBuf>) {
    let start = Instant::now();
    let end = world.end_time();
    let mut finished = false;
    loop {
        match rx.recv_timeout(TICK) {
            Ok(Msg::Job(job)) => job(&mut world),
            Ok(Msg::Shutdown(done)) => {
                let r = match &trace {
                    Some(p) => std::fs::write(p, world.trace().to_jsonl()).map_err(io_err(p)),
                    None => Ok(()),
                };
                tracing::info!(t = world.now().as_secs_f64(), "simulation stopped");
                let _ = done.send(r);
                return;
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
        if !finished {
            let target = SimTime::from_secs_f64(start.elapsed().as_secs_f64() * speed).min(end);
            if target > world.now() {
                finished = !world.run_until(target);
                if finished {
                    tracing::info!("scenario finished; serving final state");
                }
            }
        }
        for ev in world.drain_panel() {
            let _ = events.send(ev);
        }
    }
}

pub fn serve(opts: ServeOptions) -> Result<(), CliError> {
    let mut world = World::new(&opts.scenario)?;
    world.enable_panel();
    let client = match &opts.client {
        Some(name) => world
            .client_index(name)
            .ok_or_else(|| CliError::Usage(format!("no client `{name}` in scenario")))?,
        None if world.scenario().clients.is_empty() => {
            return Err(CliError::Usage("serve mode needs at least one client in the scenario".into()))
        }
        None => 0,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io { path: "tokio runtime".into(), source })?;
    runtime.block_on(async move {
        let http = TcpListener::bind(opts.bind)
            .await
            .map_err(|source| CliError::Bind { addr: opts.bind.to_string(), source })?;
        let wire_listener = TcpListener::bind(opts.wire_bind)
            .await
            .map_err(|source| CliError::Bind { addr: opts.wire_bind.to_string(), source })?;
        let http_addr = http.local_addr().map_err(|source| CliError::Bind { addr: opts.bind.to_string(), source })?;
        let wire_addr = wire_listener
            .local_addr()
            .map_err(|source| CliError::Bind { addr: opts.wire_bind.to_string(), source })?;

        let (tx, rx) = mpsc::channel();
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let sim = Sim { tx, events: events.clone(), client };
        let (speed, trace) = (opts.speed, opts.trace.clone());
        let owner = std::thread::spawn(move || own(world, rx, events, speed, trace));

        println!("http listening on {http_addr}");
        println!("wire listening on {wire_addr}");
        tracing::info!(%http_addr, %wire_addr, speed, "serving");

        tokio::spawn(wire::serve_wire(wire_listener, sim.clone()));
        let app = router(sim.clone());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        let served = axum::serve(http, app).with_graceful_shutdown(shutdown).await;
        let flushed = sim.shutdown().await;
        let _ = owner.join();
        served.map_err(|source| CliError::Io { path: "http server".into(), source })?;
        flushed
    })
}

pub fn router(sim: Sim) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/devices", get(devices))
        .route("/devices/{addr}/command", post(command))
        .route("/config", get(config))
        .route("/config/{key}", put(set_config))
        .route("/alarms", get(alarms))
        .route("/alarms/{id}/ack", post(ack_alarm))
        .route("/cameras", get(cameras))
        .route("/cameras/{name}/control", post(camera_control))
        .route("/cameras/{name}/stream", post(camera_stream))
        .route("/events", get(events_ws))
        .with_state(sim)
}

fn snapshot(w: &World) -> Value {
    json!({ "t": w.now().as_secs_f64(), "kind": "SNAPSHOT", "payload": { "devices": w.devices(), "config": w.router_config() } })
}

async fn status(State(sim): State<Sim>) -> Result<Json<Value>, ApiError> {
    sim.call(|w| {
        let phase = match w.run_phase() {
            RunPhase::Running => "running",
            RunPhase::Draining => "draining",
            RunPhase::Finished => "finished",
        };
        Json(json!({ "scenario": w.scenario().name, "t": w.now().as_secs_f64(), "end": w.end_time().as_secs_f64(), "phase": phase }))
    })
    .await
}

async fn devices(State(sim): State<Sim>) -> Result<Json<Value>, ApiError> {
    sim.call(|w| Json(json!(w.devices()))).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandBody {
    #[serde(default)]
    client: Option<String>,
    #[serde(default)]
    set: Option<std::collections::BTreeMap<String, i32>>,
    #[serde(default)]
    query: Option<bool>,
    #[serde(default)]
    ir_code: Option<String>,
}

fn client_of(w: &World, default: usize, name: Option<&str>) -> Result<usize, ApiError> {
    match name {
        Some(n) => w.client_index(n).ok_or_else(|| ApiError::NotFound(format!("no client `{n}`"))),
        None => Ok(default),
    }
}

async fn command(State(sim): State<Sim>, Path(addr): Path<u8>, Json(body): Json<CommandBody>) -> Result<Response, ApiError> {
    let default = sim.client;
    sim.call(move |w| {
        let idx = client_of(w, default, body.client.as_deref())?;
        let action = ActionSpec { set: body.set, query: body.query, ir_code: body.ir_code };
        if action.set.is_none() && action.query.is_none() && action.ir_code.is_none() {
            return Err(ApiError::BadRequest("one of set, query or ir_code is required".into()));
        }
        let msg = w.action_message(addr, &action).map_err(ApiError::BadRequest)?;
        let cmd_id = w.submit_command(idx, addr, &msg)?;
        let client = w.scenario().clients[idx].name.clone();
        Ok((StatusCode::ACCEPTED, Json(json!({ "cmd_id": cmd_id, "client": client, "addr": addr }))).into_response())
    })
    .await?
}

async fn config(State(sim): State<Sim>) -> Result<Json<Value>, ApiError> {
    sim.call(|w| Json(json!(w.router_config()))).await
}

#[derive(Debug, Deserialize)]
struct AsClient {
    #[serde(default, rename = "as")]
    client: Option<String>,
}

async fn set_config(
    State(sim): State<Sim>,
    Path(key): Path<String>,
    Query(who): Query<AsClient>,
    Json(value): Json<Value>,
) -> Result<Json<Value>, ApiError> {
    let default = sim.client;
    sim.call(move |w| {
        let idx = client_of(w, default, who.client.as_deref())?;
        Ok(Json(json!(w.admin_set(idx, &key, &value)?)))
    })
    .await?
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

async fn alarms(State(sim): State<Sim>, Query(p): Query<Page>) -> Result<Json<Value>, ApiError> {
    let limit = p.limit.min(500);
    sim.call(move |w| {
        let (total, items) = w.alarms_page(p.offset, limit);
        Json(json!({ "total": total, "offset": p.offset, "limit": limit, "items": items }))
    })
    .await
}

async fn ack_alarm(State(sim): State<Sim>, Path(id): Path<u64>) -> Result<Json<Value>, ApiError> {
    if sim.call(move |w| w.acknowledge_alarm(id)).await? {
        Ok(Json(json!({ "alarm_id": id, "acknowledged": true })))
    } else {
        Err(ApiError::NotFound(format!("no alarm {id}")))
    }
}

async fn cameras(State(sim): State<Sim>) -> Result<Json<Value>, ApiError> {
    sim.call(|w| {
        let list: Vec<Value> = w
            .scenario()
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let o = w.camera(i).orientation();
                json!({ "name": c.name, "nat": c.nat.label(), "pan_deg": o.pan_deg, "tilt_deg": o.tilt_deg })
            })
            .collect();
        Json(json!(list))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlBody {
    #[serde(default)]
    client: Option<String>,
    action: CameraAction,
    magnitude_deg: f64,
}

async fn camera_control(State(sim): State<Sim>, Path(name): Path<String>, Json(body): Json<ControlBody>) -> Result<Response, ApiError> {
    let default = sim.client;
    sim.call(move |w| {
        let idx = client_of(w, default, body.client.as_deref())?;
        let cam = w.camera_index(&name).ok_or_else(|| ApiError::NotFound(format!("no camera `{name}`")))?;
        let id = w.submit_camera_control(idx, cam, body.action, body.magnitude_deg)?;
        Ok((StatusCode::ACCEPTED, Json(json!({ "msg_id": id }))).into_response())
    })
    .await?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamBody {
    #[serde(default)]
    client: Option<String>,
    quality: Quality,
    duration_s: f64,
}

async fn camera_stream(State(sim): State<Sim>, Path(name): Path<String>, Json(body): Json<StreamBody>) -> Result<Response, ApiError> {
    if !(body.duration_s > 0.0 && body.duration_s <= 3600.0) {
        return Err(ApiError::BadRequest("duration_s must be in (0, 3600]".into()));
    }
    let default = sim.client;
    sim.call(move |w| {
        let idx = client_of(w, default, body.client.as_deref())?;
        let cam = w.camera_index(&name).ok_or_else(|| ApiError::NotFound(format!("no camera `{name}`")))?;
        let id = w
            .submit_stream(idx, cam, body.quality, SimTime::from_secs_f64(body.duration_s))
            .ok_or_else(|| ApiError::Conflict("stream could not start".into()))?;
        Ok((StatusCode::ACCEPTED, Json(json!({ "stream_id": id }))).into_response())
    })
    .await?
}

async fn events_ws(State(sim): State<Sim>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| pump_events(socket, sim))
}

async fn pump_events(mut socket: WebSocket, sim: Sim) {
    // Subscribe before the snapshot so nothing falls between the two.
    let mut rx = sim.events.subscribe();
    let Ok(snap) = sim.call(|w| snapshot(w)).await else { return };
    if socket.send(Message::Text(snap.to_string().into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            ev = rx.recv() => {
                let text = match ev {
                    Ok(ev) => event_json(&ev).to_string(),
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::warn!(skipped = n, "event subscriber lagged; resyncing");
                        match sim.call(|w| snapshot(w)).await {
                            Ok(s) => s.to_string(),
                            Err(_) => return,
                        }
                    }
                    Err(broadcast::error::RecvError::Closed) => return,
                };
                if socket.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            }
        }
    }
}
