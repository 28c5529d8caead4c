//! Length-prefixed envelope endpoint: 4-byte big-endian length, then the
//! JSON of a `WanEnvelope`.
//!
//! A connection first sends `AUTH` with `{"secret": ...}` from
//! `user:<name>`. After that it may send `CMD` (`{"addr", "tlv"}`),
//! `CAM_CTRL` (`{"camera", "action", "magnitude_deg"}`) and `ADMIN`
//! (`{"key", "value"}`). Command outcomes and alarms are pushed back as
//! `CMD_ACK` and `ALARM` envelopes.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use hearth_core::camera::CameraAction;
use hearth_core::device::DeviceMessage;
use hearth_core::home::World;
use hearth_core::wan::{encode_wire, CmdPayload, EnvelopeKind, Principal, WanEnvelope, WireDecoder};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, watch};

use crate::serve::{ApiError, Sim};

pub async fn serve_wire(listener: TcpListener, sim: Sim) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                tracing::debug!(%peer, "wire connection");
                tokio::spawn(connection(stream, sim.clone()));
            }
            Err(e) => tracing::warn!(error = %e, "wire accept failed"),
        }
    }
}

struct Conn {
    next_id: AtomicU64,
    out: mpsc::UnboundedSender<Vec<u8>>,
}

impl Conn {
    fn send(&self, kind: EnvelopeKind, to: &Principal, payload: Value) {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let env = WanEnvelope::new(id, kind, Principal::Server, to.clone(), payload);
        let _ = self.out.send(encode_wire(&env));
    }
}

async fn connection(stream: TcpStream, sim: Sim) {
    let (mut rd, mut wr) = stream.into_split();
    let (out, mut out_rx) = mpsc::unbounded_channel::<Vec<u8>>();
    let conn = Arc::new(Conn { next_id: AtomicU64::new(1), out });
    let (user_tx, user_rx) = watch::channel::<Option<String>>(None);

    let writer = tokio::spawn(async move {
        while let Some(frame) = out_rx.recv().await {
            if wr.write_all(&frame).await.is_err() {
                break;
            }
        }
    });
    let pusher = tokio::spawn(push_events(sim.events.subscribe(), user_rx, conn.clone()));

    let mut decoder = WireDecoder::new();
    let mut buf = vec![0u8; 16 * 1024];
    'read: loop {
        let n = match rd.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        loop {
            match decoder.next_envelope() {
                Ok(Some(env)) => {
                    let user = user_tx.borrow().clone();
                    let (kind, from) = (env.kind, env.from.clone());
                    match handle(&sim, user.as_deref(), env).await {
                        Ok(Reply { kind, to, payload, login }) => {
                            if let Some(name) = login {
                                let _ = user_tx.send(Some(name));
                            }
                            conn.send(kind, &to, payload);
                        }
                        Err(ApiError::Stopped) => break 'read,
                        Err(e) => conn.send(kind, &from, json!({ "ok": false, "error": e.to_string() })),
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    // Framing is lost after a bad frame; report and hang up.
                    conn.send(EnvelopeKind::Auth, &Principal::Server, json!({ "ok": false, "error": e.to_string() }));
                    break 'read;
                }
            }
        }
    }
    pusher.abort();
    drop(conn);
    let _ = writer.await;
}

struct Reply {
    kind: EnvelopeKind,
    to: Principal,
    payload: Value,
    login: Option<String>,
}

#[derive(Deserialize)]
struct AuthBody {
    secret: String,
}

#[derive(Deserialize)]
struct CamCtrlBody {
    camera: String,
    action: CameraAction,
    magnitude_deg: f64,
}

#[derive(Deserialize)]
struct AdminBody {
    key: String,
    value: Value,
}

fn bad(e: impl std::fmt::Display) -> ApiError {
    ApiError::BadRequest(e.to_string())
}

fn client_idx(w: &World, name: &str) -> Result<usize, ApiError> {
    w.client_index(name).ok_or_else(|| ApiError::Unauthorized(format!("unknown user `{name}`")))
}

async fn handle(sim: &Sim, user: Option<&str>, env: WanEnvelope) -> Result<Reply, ApiError> {
    let from = env.from.clone();
    let reply = |kind, payload| Reply { kind, to: from.clone(), payload, login: None };
    if env.kind == EnvelopeKind::Auth {
        let Principal::User(name) = &env.from else {
            return Err(ApiError::Unauthorized("AUTH must come from a user principal".into()));
        };
        let body: AuthBody = serde_json::from_value(env.payload).map_err(bad)?;
        let name = name.clone();
        let check = name.clone();
        let ok = sim
            .call(move |w| w.scenario().clients.iter().any(|c| c.name == check && c.secret == body.secret))
            .await?;
        if !ok {
            return Err(ApiError::Unauthorized("bad credentials".into()));
        }
        return Ok(Reply { login: Some(name.clone()), ..reply(EnvelopeKind::Auth, json!({ "ok": true, "user": name })) });
    }
    let Some(user) = user.map(str::to_string) else {
        return Err(ApiError::Unauthorized("send AUTH first".into()));
    };
    if env.from != Principal::user(&user) {
        return Err(ApiError::Unauthorized(format!("connection is bound to user:{user}")));
    }
    match env.kind {
        EnvelopeKind::Cmd => {
            let body: CmdPayload = serde_json::from_value(env.payload).map_err(bad)?;
            let msg = DeviceMessage::decode(&body.tlv_bytes().map_err(bad)?).map_err(bad)?;
            let addr = body.addr;
            let cmd_id = sim
                .call(move |w| -> Result<u64, ApiError> { Ok(w.submit_command(client_idx(w, &user)?, addr, &msg)?) })
                .await??;
            Ok(reply(EnvelopeKind::CmdAck, json!({ "cmd_id": cmd_id, "addr": addr, "accepted": true })))
        }
        EnvelopeKind::CamCtrl => {
            let body: CamCtrlBody = serde_json::from_value(env.payload).map_err(bad)?;
            let id = sim
                .call(move |w| -> Result<u64, ApiError> {
                    let cam = w
                        .camera_index(&body.camera)
                        .ok_or_else(|| ApiError::NotFound(format!("no camera `{}`", body.camera)))?;
                    Ok(w.submit_camera_control(client_idx(w, &user)?, cam, body.action, body.magnitude_deg)?)
                })
                .await??;
            Ok(reply(EnvelopeKind::CamCtrl, json!({ "msg_id": id, "accepted": true })))
        }
        EnvelopeKind::Admin => {
            let body: AdminBody = serde_json::from_value(env.payload).map_err(bad)?;
            let config = sim
                .call(move |w| -> Result<Value, ApiError> {
                    Ok(json!(w.admin_set(client_idx(w, &user)?, &body.key, &body.value)?))
                })
                .await??;
            Ok(reply(EnvelopeKind::Admin, config))
        }
        other => Err(ApiError::BadRequest(format!("{} is not accepted from clients", other.label()))),
    }
}

/// Forwards this user's command outcomes and every alarm.
async fn push_events(
    mut rx: broadcast::Receiver<hearth_core::home::PanelEvent>,
    user: watch::Receiver<Option<String>>,
    conn: Arc<Conn>,
) {
    loop {
        let ev = match rx.recv().await {
            Ok(ev) => ev,
            Err(broadcast::error::RecvError::Lagged(_)) => continue,
            Err(broadcast::error::RecvError::Closed) => return,
        };
        let Some(name) = user.borrow().clone() else { continue };
        let to = Principal::user(&name);
        match ev.kind.as_str() {
            "CMD_ACK" if ev.payload["client"] == name.as_str() => conn.send(EnvelopeKind::CmdAck, &to, ev.payload),
            "ALARM" => conn.send(EnvelopeKind::Alarm, &to, ev.payload),
            _ => {}
        }
    }
}
