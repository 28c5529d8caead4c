//! WAN side of the world: rendezvous sessions, the gateway's command path,
//! alarm delivery, clients and camera streams.

use serde_json::{json, Value};

use super::{Ev, RunPhase, World};
use crate::camera::{CameraAction, ChunkSink, FailingSink, GapDetector, LocalFileSink, MemorySink, Quality};
use crate::client::{ClientError, ClientEvent};
use crate::device::{DeviceMessage, TlvType};
use crate::gateway::{AlarmMode, CommandResolution, GatewayError};
use crate::rendezvous::{NatProfile, NatType, PathKind, RelayOutcome, RendezvousError};
use crate::scenario::SinkSpec;
use crate::sim::SimTime;
use crate::wan::{CmdAckPayload, CmdPayload, EnvelopeKind, Principal, WanEnvelope, WanPath};

impl World {
    pub(crate) fn pull_server_events(&mut self) {
        for ev in self.server.drain_events() {
            self.trace.push(ev);
        }
    }

    fn party_credentials(&self, who: &Principal) -> Option<(String, NatType, usize)> {
        match who {
            Principal::Gateway(_) => Some((self.scenario.gateway.secret.clone(), self.scenario.gateway.nat, 0)),
            Principal::User(n) => {
                let i = self.scenario.clients.iter().position(|c| &c.name == n)?;
                Some((self.clients[i].secret.clone(), self.clients[i].nat, 1 + i))
            }
            Principal::Camera(n) => {
                let i = self.cameras.iter().position(|c| &c.cam.name == n)?;
                Some((self.cameras[i].secret.clone(), self.cameras[i].nat, 1 + self.clients.len() + i))
            }
            _ => None,
        }
    }

    fn loss_hit(&mut self, who: &Principal) -> bool {
        let now = self.now().as_secs_f64();
        let label = who.to_string();
        let p = self
            .scenario
            .faults
            .wan_loss
            .iter()
            .filter(|w| w.principal == label && now >= w.from_s && now < w.to_s)
            .map(|w| w.p)
            .fold(0.0f64, f64::max);
        p > 0.0 && self.fault_rng.chance(p)
    }

    /// Sends `env` from its `from` party toward the server.
    pub(crate) fn wan_send(&mut self, mut env: WanEnvelope) {
        let from = env.from.clone();
        let online = self.parties.get(&from).is_some_and(|p| p.session.is_some());
        let base = [
            ("from", json!(from.to_string())),
            ("to", json!(env.to.to_string())),
            ("kind", json!(env.kind.label())),
            ("msg_id", json!(env.msg_id)),
        ];
        if !online {
            self.emit("wan", "wan.offline_drop", &base);
            return;
        }
        if self.loss_hit(&from) {
            self.emit("wan", "fault.wan_loss", &base);
            return;
        }
        let tp = self.scenario.faults.tamper_p;
        if env.kind == EnvelopeKind::Cmd && tp > 0.0 && self.fault_rng.chance(tp) {
            if let Some(addr) = env.payload.get("addr").and_then(Value::as_u64) {
                env.payload["addr"] = json!((addr + 1) % 255);
            }
            self.emit("wan", "fault.tamper", &base);
        }
        let mut detail = base.to_vec();
        detail.push(("bytes", json!(env.wire_len())));
        self.emit("wan", "wan.tx", &detail);
        let dp = self.scenario.faults.wan_duplicate_p;
        if dp > 0.0 && self.fault_rng.chance(dp) {
            self.emit("wan", "fault.wan_dup", &base);
            self.q.schedule_in(self.hop + SimTime::from_millis(1), Ev::ToServer { env: env.clone() });
        }
        self.q.schedule_in(self.hop, Ev::ToServer { env });
    }

    pub(crate) fn on_to_server(&mut self, env: WanEnvelope) {
        let now = self.now();
        let from = env.from.clone();
        let Some(session) = self.parties.get(&from).and_then(|p| p.session) else {
            self.emit("server", "wan.reject", &[("from", json!(from.to_string())), ("error", json!("no session"))]);
            return;
        };
        let (kind, msg_id) = (env.kind, env.msg_id);
        match self.server.relay(session, env, now) {
            Ok(RelayOutcome::Delivered(d)) => {
                self.pull_server_events();
                if self.loss_hit(&d.to) {
                    self.emit(
                        "wan",
                        "fault.wan_loss",
                        &[("to", json!(d.to.to_string())), ("kind", json!(kind.label())), ("msg_id", json!(msg_id))],
                    );
                    return;
                }
                self.q.schedule_in(self.hop, Ev::ToParty { to: d.to, env: d.env });
            }
            Ok(_) => self.pull_server_events(),
            Err(e) => {
                self.pull_server_events();
                self.emit("server", "wan.reject", &[("from", json!(from.to_string())), ("error", json!(e.to_string()))]);
            }
        }
    }

    pub(crate) fn on_to_party(&mut self, to: Principal, env: WanEnvelope) {
        let now = self.now();
        if self.parties.get(&to).is_none_or(|p| p.session.is_none()) {
            self.server.requeue(env, now);
            self.pull_server_events();
            return;
        }
        self.emit(
            "wan",
            "wan.rx",
            &[
                ("to", json!(to.to_string())),
                ("from", json!(env.from.to_string())),
                ("kind", json!(env.kind.label())),
                ("msg_id", json!(env.msg_id)),
            ],
        );
        match &to {
            Principal::Gateway(_) => self.gateway_rx(env),
            Principal::User(n) => {
                if let Some(i) = self.client_index(n) {
                    self.client_rx(i, env);
                }
            }
            Principal::Camera(n) => {
                if let Some(i) = self.camera_index(n) {
                    self.camera_rx(i, env);
                }
            }
            _ => {}
        }
    }

    // ---- sessions ----

    pub(crate) fn on_login(&mut self, who: Principal) {
        let now = self.now();
        let Some((secret, nat, idx)) = self.party_credentials(&who) else { return };
        if let Some(p) = self.parties.get_mut(&who) {
            p.held = false;
        }
        let endpoint = format!("198.51.100.{}:{}", 1 + idx % 250, 40000 + idx);
        match self.server.login(&who, &secret, NatProfile::new(nat, endpoint), now) {
            Ok(out) => {
                self.pull_server_events();
                let party = self.parties.get_mut(&who).expect("known party");
                party.session = Some(out.session);
                let start_hb = !party.heartbeat_running;
                party.heartbeat_running = true;
                for d in out.flushed {
                    self.q.schedule_in(self.hop, Ev::ToParty { to: d.to, env: d.env });
                }
                if start_hb {
                    let iv = self.server.config().heartbeat_interval;
                    self.q.schedule_in(iv, Ev::Heartbeat { who: who.clone() });
                }
            }
            Err(e) => {
                self.pull_server_events();
                self.emit("wan", "wan.login_fail", &[("principal", json!(who.to_string())), ("error", json!(e.to_string()))]);
                return;
            }
        }
        if let Principal::User(name) = &who {
            let i = self.client_index(name).expect("known client");
            // A still-valid gateway session survives a rendezvous reconnect,
            // so envelopes queued while offline stay verifiable.
            let live = self.clients[i].core.session().is_some_and(|s| self.gateway.session(&s.token, now).is_ok());
            if live {
                self.emit(name, "client.resume", &[]);
                return;
            }
            match self.gateway.authenticate_session(name, &secret, now) {
                Ok(s) => {
                    let role = s.role;
                    self.clients[i].core.bind(s);
                    self.emit(name, "client.login", &[("role", json!(role))]);
                    if self.clients[i].subscribe && !self.clients[i].subscribed {
                        self.clients[i].subscribed = true;
                        let mode = self.clients[i].core.mode;
                        self.gateway.alarms.subscribe(who.clone(), mode);
                        if let AlarmMode::Poll { interval } = mode {
                            self.q.schedule_in(interval, Ev::PollFlush { client: i, interval });
                        }
                    }
                }
                Err(e) => self.emit(name, "client.auth_fail", &[("error", json!(e.to_string()))]),
            }
        }
    }

    pub(crate) fn on_logout(&mut self, who: Principal, hold: bool) {
        let now = self.now();
        let Some(p) = self.parties.get_mut(&who) else { return };
        p.held = hold;
        if let Some(s) = p.session.take() {
            let _ = self.server.logout(s, now);
            self.pull_server_events();
        }
    }

    pub(crate) fn on_heartbeat(&mut self, who: Principal) {
        let now = self.now();
        let Some(p) = self.parties.get(&who) else { return };
        let (session, held) = (p.session, p.held);
        match session {
            Some(s) => {
                if let Err(RendezvousError::UnknownSession(_)) = self.server.heartbeat(s, now) {
                    self.parties.get_mut(&who).expect("known").session = None;
                    if !held {
                        self.on_login(who.clone());
                    }
                }
            }
            None if !held => self.on_login(who.clone()),
            None => {}
        }
        let iv = self.server.config().heartbeat_interval;
        if now + iv <= self.hard_end {
            self.q.schedule_in(iv, Ev::Heartbeat { who });
        }
    }

    pub(crate) fn on_sweep(&mut self) {
        let now = self.now();
        for p in self.server.sweep(now) {
            if let Some(party) = self.parties.get_mut(&p) {
                party.session = None;
            }
        }
        self.pull_server_events();
        if now + super::SWEEP_PERIOD <= self.hard_end {
            self.q.schedule_in(super::SWEEP_PERIOD, Ev::Sweep);
        }
    }

    // ---- commands ----

    pub(crate) fn issue_command(&mut self, c: usize, addr: u8, msg: &DeviceMessage) -> Result<u64, ClientError> {
        let now = self.now();
        let name = self.scenario.clients[c].name.clone();
        let env = match self.clients[c].core.send_command(addr, msg, now) {
            Ok(e) => e,
            Err(e) => {
                self.emit(&name, "cmd.issue_fail", &[("addr", json!(addr)), ("error", json!(e.to_string()))]);
                return Err(e);
            }
        };
        let id = env.msg_id;
        self.emit(
            &name,
            "cmd.issue",
            &[
                ("client", json!(name)),
                ("cmd", json!(id)),
                ("addr", json!(addr)),
                ("tlv", json!(hex::encode(msg.encode().unwrap_or_default()))),
            ],
        );
        if let Some(deadline) = self.clients[c].core.deadline_of(id) {
            self.at(deadline, Ev::ClientExpire { client: c });
        }
        self.wan_send(env);
        Ok(id)
    }

    pub(crate) fn on_client_expire(&mut self, c: usize) {
        let now = self.now();
        let name = self.scenario.clients[c].name.clone();
        for r in self.clients[c].core.expire(now) {
            self.emit(
                &name,
                "cmd.done",
                &[
                    ("client", json!(name)),
                    ("cmd", json!(r.cmd_id)),
                    ("addr", json!(r.addr)),
                    ("ok", json!(false)),
                    ("error", json!("timeout")),
                    ("latency_us", json!(r.latency().as_micros())),
                ],
            );
            self.panel_push("CMD_ACK", json!({ "client": name, "cmd_id": r.cmd_id, "addr": r.addr, "ok": false, "error": "timeout" }));
        }
    }

    fn gateway_rx(&mut self, env: WanEnvelope) {
        match env.kind {
            EnvelopeKind::Cmd => self.gateway_cmd(env),
            _ => self.emit("gateway", "gw.ignore", &[("kind", json!(env.kind.label())), ("from", json!(env.from.to_string()))]),
        }
    }

    fn gateway_reject(&mut self, to: Principal, cmd: u64, addr: u8, err: GatewayError) {
        self.emit(
            "gateway",
            "cmd.reject",
            &[("client", json!(to.to_string())), ("cmd", json!(cmd)), ("addr", json!(addr)), ("error", json!(err.code()))],
        );
        let p = CmdAckPayload {
            cmd_id: cmd,
            addr,
            ok: false,
            error: Some(err.code().to_string()),
            report: None,
        };
        self.gateway_send(to, EnvelopeKind::CmdAck, serde_json::to_value(p).expect("serializable"));
    }

    fn gateway_cmd(&mut self, env: WanEnvelope) {
        let now = self.now();
        let client = env.from.clone();
        let cmd = env.msg_id;
        self.emit("gateway", "cmd.gw_rx", &[("client", json!(client.to_string())), ("cmd", json!(cmd))]);
        let addr_hint = env.payload.get("addr").and_then(Value::as_u64).unwrap_or(0) as u8;
        let Some(session) = self.gateway.session_for(&client, now).cloned() else {
            return self.gateway_reject(client, cmd, addr_hint, GatewayError::AuthFailed { hint: None });
        };
        if env.verify(&session.key_bytes()).is_err() {
            return self.gateway_reject(client, cmd, addr_hint, GatewayError::Integrity);
        }
        let parsed = serde_json::from_value::<CmdPayload>(env.payload.clone())
            .map_err(|e| e.to_string())
            .and_then(|p| p.tlv_bytes().map(|b| (p.addr, b)).map_err(|e| e.to_string()))
            .and_then(|(a, b)| DeviceMessage::decode(&b).map(|m| (a, b, m)).map_err(|e| e.to_string()));
        let (addr, tlv, msg) = match parsed {
            Ok(x) => x,
            Err(e) => return self.gateway_reject(client, cmd, addr_hint, GatewayError::Malformed(e)),
        };
        let Some(desc) = self.coord.registry.get(addr) else {
            return self.gateway_reject(client, cmd, addr, GatewayError::UnknownDevice(addr));
        };
        let spec = self.kinds.get(desc.kind).expect("registered kind").clone();
        match msg.tlv_type {
            TlvType::SetActuator => {
                if !spec.is_actuator() {
                    return self.gateway_reject(client, cmd, addr, GatewayError::Unsupported(spec.id));
                }
                if spec.opaque_command.is_none() {
                    if let Err(e) = spec.decode_set(&msg.value) {
                        return self.gateway_reject(client, cmd, addr, GatewayError::Malformed(e.to_string()));
                    }
                }
            }
            TlvType::QueryState => {}
            _ => return self.gateway_reject(client, cmd, addr, GatewayError::Unsupported(spec.id)),
        }
        let gw_cmd = self.next_gw_cmd;
        self.next_gw_cmd += 1;
        self.gw_origin.insert(gw_cmd, cmd);
        self.gateway.begin_command(gw_cmd, client.clone(), addr, tlv.clone(), now);
        self.emit(
            "gateway",
            "cmd.accept",
            &[("client", json!(client.to_string())), ("cmd", json!(cmd)), ("gw_cmd", json!(gw_cmd)), ("addr", json!(addr))],
        );
        if let Err(e) = self.coord_downlink(addr, tlv, gw_cmd) {
            if let Some(res) = self.gateway.commands.fail(gw_cmd, e) {
                self.send_resolution(res);
            }
        }
        self.arm_gateway_expiry();
    }

    pub(crate) fn send_resolution(&mut self, res: CommandResolution) {
        let now = self.now();
        let client_cmd = self.gw_origin.remove(&res.cmd_id).unwrap_or(res.cmd_id);
        let mut p = res.ack_payload();
        p.cmd_id = client_cmd;
        self.emit(
            "gateway",
            "cmd.resolve",
            &[
                ("client", json!(res.client.to_string())),
                ("cmd", json!(client_cmd)),
                ("addr", json!(res.addr)),
                ("ok", json!(p.ok)),
                ("error", json!(p.error)),
                ("gw_latency_us", json!((now - res.received_at).as_micros())),
            ],
        );
        self.gateway_send(res.client, EnvelopeKind::CmdAck, serde_json::to_value(p).expect("serializable"));
    }

    pub(crate) fn on_gateway_expire(&mut self) {
        self.gw_expiry_at = None;
        let now = self.now();
        for res in self.gateway.commands.expire(now) {
            self.send_resolution(res);
        }
        self.arm_gateway_expiry();
    }

    pub(crate) fn gateway_send(&mut self, to: Principal, kind: EnvelopeKind, payload: Value) {
        let now = self.now();
        let id = self.next_gw_msg;
        self.next_gw_msg += 1;
        let mut env = WanEnvelope::new(id, kind, self.gateway.principal.clone(), to.clone(), payload);
        if let Some(s) = self.gateway.session_for(&to, now) {
            env.sign(&s.key_bytes());
        }
        self.wan_send(env);
    }

    // ---- alarms ----

    pub(crate) fn flush_alarms(&mut self, c: usize) {
        let who = self.clients[c].core.principal.clone();
        if let Some(batch) = self.gateway.alarms.flush(&who) {
            self.emit("gateway", "alarm.send", &[("to", json!(who.to_string())), ("count", json!(batch.alarms.len()))]);
            self.gateway_send(who, EnvelopeKind::Alarm, serde_json::to_value(batch).expect("serializable"));
        }
    }

    pub(crate) fn on_poll_flush(&mut self, c: usize, interval: SimTime) {
        self.flush_alarms(c);
        if self.now() + interval <= self.hard_end {
            self.q.schedule_in(interval, Ev::PollFlush { client: c, interval });
        }
    }

    // ---- clients ----

    fn client_rx(&mut self, c: usize, env: WanEnvelope) {
        let now = self.now();
        let name = self.scenario.clients[c].name.clone();
        if env.from == self.gateway.principal {
            if let Some(s) = self.clients[c].core.session() {
                if env.verify(&s.key_bytes()).is_err() {
                    self.emit(&name, "client.integrity_fail", &[("msg_id", json!(env.msg_id))]);
                    return;
                }
            }
        }
        match self.clients[c].core.on_envelope(env, now) {
            ClientEvent::CommandDone(r) => {
                let (ok, error) = match &r.outcome {
                    Ok(_) => (true, None),
                    Err(crate::client::ClientError::Gateway(code)) => (false, Some(code.clone())),
                    Err(e) => (false, Some(e.to_string())),
                };
                self.emit(
                    &name,
                    "cmd.done",
                    &[
                        ("client", json!(name)),
                        ("cmd", json!(r.cmd_id)),
                        ("addr", json!(r.addr)),
                        ("ok", json!(ok)),
                        ("error", json!(error)),
                        ("latency_us", json!(r.latency().as_micros())),
                    ],
                );
                self.panel_push("CMD_ACK", json!({ "client": name, "cmd_id": r.cmd_id, "addr": r.addr, "ok": ok, "error": error }));
            }
            ClientEvent::Alarms(alarms) => {
                for a in alarms {
                    self.emit(
                        &name,
                        "alarm.inbox",
                        &[
                            ("client", json!(name)),
                            ("alarm_id", json!(a.alarm_id)),
                            ("addr", json!(a.addr)),
                            ("latency_us", json!(now.as_micros().saturating_sub(a.raised_at_us))),
                        ],
                    );
                }
            }
            ClientEvent::Stale(id) => self.emit(&name, "cmd.stale", &[("cmd", json!(id))]),
            ClientEvent::Other(env) => match env.kind {
                EnvelopeKind::CamData => self.client_chunk(c, &env),
                EnvelopeKind::CamCtrl => {
                    self.emit(&name, "cam.ctrl_ack", &[("from", json!(env.from.to_string())), ("payload", env.payload.clone())]);
                }
                _ => {}
            },
        }
    }

    fn client_chunk(&mut self, c: usize, env: &WanEnvelope) {
        let name = self.scenario.clients[c].name.clone();
        let (Some(stream), Some(seq)) = (
            env.payload.get("stream_id").and_then(Value::as_u64),
            env.payload.get("seq").and_then(Value::as_u64),
        ) else {
            return;
        };
        let camera = env.from.to_string();
        let det = self.clients[c].streams.entry(stream).or_insert_with(GapDetector::default);
        let gap = det.observe(seq as u32);
        let path = if env.path == WanPath::P2p { "p2p" } else { "relay" };
        self.emit(
            &name,
            "cam.rx",
            &[("camera", json!(camera)), ("stream", json!(stream)), ("seq", json!(seq)), ("gap", json!(gap)), ("path", json!(path))],
        );
    }

    // ---- cameras ----

    pub(crate) fn on_stream_start(&mut self, idx: usize) {
        let s = self.scenario.streams[idx].clone();
        let (Some(c), Some(cam)) = (self.client_index(&s.client), self.camera_index(&s.camera)) else { return };
        self.start_stream(c, cam, s.quality, SimTime::from_secs_f64(s.duration_s), s.sink.as_ref());
    }

    pub(crate) fn start_stream(&mut self, c: usize, cam: usize, quality: Quality, duration: SimTime, sink: Option<&SinkSpec>) -> Option<u64> {
        let now = self.now();
        if self.phase != RunPhase::Running {
            return None;
        }
        let client_p = self.clients[c].core.principal.clone();
        let cam_p = Principal::camera(&self.cameras[cam].cam.name);
        let (nat_a, nat_b) = (self.clients[c].nat, self.cameras[cam].nat);
        let size = quality.window_bytes();
        let decision = self.server.decide_path(size, nat_a, nat_b);
        let mut path = decision.decision;
        if path == PathKind::P2pDirect && self.server.broker_p2p(&client_p, &cam_p, now).is_err() {
            path = PathKind::P2pFailedFallbackRelay;
        }
        self.pull_server_events();
        self.emit(
            "server",
            "path.decide",
            &[
                ("client", json!(client_p.to_string())),
                ("camera", json!(cam_p.to_string())),
                ("size", json!(size)),
                ("nat_a", json!(nat_a.label())),
                ("nat_b", json!(nat_b.label())),
                ("decision", json!(path.label())),
            ],
        );
        self.panel_push("PATH", json!({ "client": client_p, "camera": cam_p, "size": size, "decision": path.label() }));
        let id = match self.cameras[cam].cam.start_stream(quality, path, now) {
            Ok(info) => info.stream_id,
            Err(e) => {
                self.emit(&cam_p.to_string(), "cam.error", &[("error", json!(e.to_string()))]);
                return None;
            }
        };
        let boxed: Option<Box<dyn ChunkSink + Send>> = match sink {
            None => None,
            Some(SinkSpec::Memory) => Some(Box::new(MemorySink::default())),
            Some(SinkSpec::FailingAfter(n)) => Some(Box::new(FailingSink::new(*n))),
            Some(SinkSpec::File(p)) => match LocalFileSink::create(p) {
                Ok(s) => Some(Box::new(s)),
                Err(e) => {
                    self.emit(&cam_p.to_string(), "cam.sink_error", &[("stream", json!(id)), ("error", json!(e.to_string()))]);
                    None
                }
            },
        };
        if let Some(b) = boxed {
            self.cameras[cam].sinks.insert(id, b);
        }
        self.cameras[cam].active.insert(id, (c, path, now + duration));
        self.emit(
            &cam_p.to_string(),
            "cam.stream_start",
            &[
                ("client", json!(client_p.to_string())),
                ("stream", json!(id)),
                ("quality", json!(quality)),
                ("path", json!(path.label())),
            ],
        );
        self.at(now, Ev::StreamChunk { cam, stream: id });
        Some(id)
    }

    pub(crate) fn on_stream_chunk(&mut self, cam: usize, stream: u64) {
        let now = self.now();
        let Some(&(c, path, stop)) = self.cameras[cam].active.get(&stream) else { return };
        let cam_p = Principal::camera(&self.cameras[cam].cam.name);
        let label = cam_p.to_string();
        if now >= stop || self.phase != RunPhase::Running {
            let info = self.cameras[cam].cam.stop_stream(stream);
            self.cameras[cam].active.remove(&stream);
            self.emit(&label, "cam.stream_stop", &[("stream", json!(stream)), ("chunks", json!(info.map(|i| i.next_seq)))]);
            return;
        }
        let chunk = self.cameras[cam].cam.stream_mut(stream).expect("active stream").next_chunk(now);
        if let Some(sink) = self.cameras[cam].sinks.get_mut(&stream) {
            if let Err(e) = sink.append(&chunk) {
                let msg = e.to_string();
                self.emit(&label, "cam.sink_error", &[("stream", json!(stream)), ("seq", json!(chunk.seq)), ("error", json!(msg))]);
            }
        }
        self.emit(&label, "cam.chunk", &[("stream", json!(stream)), ("seq", json!(chunk.seq)), ("bytes", json!(chunk.payload.len()))]);
        let to = self.clients[c].core.principal.clone();
        let id = self.next_cam_msg;
        self.next_cam_msg += 1;
        let mut env = WanEnvelope::new(
            id,
            EnvelopeKind::CamData,
            cam_p.clone(),
            to.clone(),
            json!({
                "stream_id": stream,
                "seq": chunk.seq,
                "ts_us": chunk.timestamp.as_micros(),
                "data": hex::encode(&chunk.payload),
            }),
        );
        if path == PathKind::P2pDirect {
            env.path = WanPath::P2p;
            if !self.loss_hit(&cam_p) {
                self.q.schedule_in(self.hop, Ev::ToParty { to, env });
            }
        } else {
            self.wan_send(env);
        }
        self.q.schedule_in(Quality::chunk_interval(), Ev::StreamChunk { cam, stream });
    }

    pub(crate) fn camera_control(&mut self, c: usize, cam: usize, action: CameraAction, magnitude: f64) -> Result<u64, ClientError> {
        let name = self.scenario.clients[c].name.clone();
        let to = Principal::camera(&self.cameras[cam].cam.name);
        let env = self.clients[c]
            .core
            .envelope(EnvelopeKind::CamCtrl, to.clone(), json!({ "action": action, "magnitude_deg": magnitude }))?;
        let id = env.msg_id;
        self.emit(
            &name,
            "cam.ctrl_issue",
            &[("camera", json!(to.to_string())), ("action", json!(action)), ("magnitude_deg", json!(magnitude)), ("msg_id", json!(id))],
        );
        self.wan_send(env);
        Ok(id)
    }

    fn camera_rx(&mut self, cam: usize, env: WanEnvelope) {
        if env.kind != EnvelopeKind::CamCtrl {
            return;
        }
        let cam_p = Principal::camera(&self.cameras[cam].cam.name);
        let label = cam_p.to_string();
        let action = env.payload.get("action").cloned().and_then(|v| serde_json::from_value::<CameraAction>(v).ok());
        let magnitude = env.payload.get("magnitude_deg").and_then(Value::as_f64).unwrap_or(f64::NAN);
        let reply = match action {
            None => json!({ "ok": false, "error": "unknown action" }),
            Some(a) => match self.cameras[cam].cam.control(a, magnitude) {
                Ok(out) => {
                    self.emit(
                        &label,
                        "cam.ctrl",
                        &[
                            ("action", json!(a)),
                            ("pan_deg", json!(out.orientation.pan_deg)),
                            ("tilt_deg", json!(out.orientation.tilt_deg)),
                            ("warnings", json!(out.warnings)),
                        ],
                    );
                    self.panel_push(
                        "CAM",
                        json!({ "camera": label, "pan_deg": out.orientation.pan_deg, "tilt_deg": out.orientation.tilt_deg, "warnings": out.warnings }),
                    );
                    json!({ "ok": true, "ref": env.msg_id, "pan_deg": out.orientation.pan_deg, "tilt_deg": out.orientation.tilt_deg, "warnings": out.warnings })
                }
                Err(e) => json!({ "ok": false, "ref": env.msg_id, "error": e.to_string() }),
            },
        };
        let id = self.next_cam_msg;
        self.next_cam_msg += 1;
        let out = WanEnvelope::new(id, EnvelopeKind::CamCtrl, cam_p, env.from.clone(), reply);
        self.wan_send(out);
    }
}
