//! Radio side of the world: channel access, the coordinator, device
//! terminals and their sleep schedule.

use serde_json::json;

use super::{
    Ev, JoinState, OutFrame, Phase, Radio, RunPhase, TxMeta, What, World, JOIN_RETRIES, LISTEN_WINDOW, MAX_BUSY_PER_ATTEMPT,
    REJOIN_DELAY, REJOIN_SPREAD_UNITS,
};
use crate::device::{DeviceMessage, ReportCause, TlvType};
use crate::gateway::GatewayError;
use crate::mac::frame::{BROADCAST_ADDR, COORDINATOR_ADDR};
use crate::mac::{Frame, FrameType, MacMode, RadioState};
use crate::net::{BeaconInfo, JoinAck, JoinRequest, JoinStatus, NetError, PendingDownlink};
use crate::rf::{airtime_bytes, NodeId, RxOutcome, TxId};
use crate::scenario::{JoinMode, DEVICE_ID_BASE};
use crate::sim::SimTime;

/// Per-node MAC queue bound; the oldest frame is dropped beyond it.
const MAC_QUEUE_CAP: usize = 32;

impl World {
    pub(crate) fn node_name(&self, n: usize) -> String {
        if n == 0 {
            "coord".to_string()
        } else {
            self.devs[n - 1].name.clone()
        }
    }

    fn air(&self, f: &Frame) -> SimTime {
        airtime_bytes(f.encoded_len(), self.rate).expect("rate validated")
    }

    fn set_radio_state(&mut self, n: usize, state: RadioState) {
        if n == 0 {
            return;
        }
        let now = self.now();
        if let Some(l) = self.devs[n - 1].ledger.as_mut() {
            l.transition(now, state);
        }
    }

    // ---- transmission ----

    fn start_tx(&mut self, n: usize, frame: Frame, what: What, uid: Option<u64>, response: bool) {
        let now = self.now();
        let bytes = frame.encode().expect("frames built within limits");
        let len = bytes.len();
        self.medium.set_listening(NodeId(n as u32), None);
        self.set_radio_state(n, RadioState::Tx);
        let (id, end) = {
            let tx = self.medium.begin(NodeId(n as u32), bytes, now).expect("registered node");
            (tx.id, tx.end)
        };
        if what == What::JoinReq {
            self.devs[n - 1].join_req_start = Some(now);
        }
        if what != What::Beacon {
            let name = self.node_name(n);
            let retry = if response { 0 } else { self.nodes[n].retries };
            let mut detail = vec![
                ("what", json!(what.label())),
                ("src", json!(frame.src)),
                ("dst", json!(frame.dst)),
                ("seq", json!(frame.seq)),
                ("bytes", json!(len)),
                ("retry", json!(retry)),
            ];
            if let Some(u) = uid {
                detail.push(("uid", json!(u)));
            }
            self.emit(&name, "rf.tx", &detail);
        }
        self.tx_meta.insert(
            id,
            TxMeta {
                frame,
                what,
                uid,
                start: now,
            },
        );
        self.at(end, Ev::TxEnd { node: n, tx: id, response });
    }

    pub(crate) fn on_tx_end(&mut self, n: usize, tx: TxId, response: bool) {
        let now = self.now();
        let recs = self.medium.end(tx).expect("transmission in flight");
        let meta = self.tx_meta.remove(&tx).expect("metadata recorded");
        self.medium.set_listening(NodeId(n as u32), Some(now));
        self.set_radio_state(n, RadioState::RxListen);
        if !response {
            let needs_ack = self.nodes[n].queue.front().is_some_and(|f| f.needs_ack);
            if needs_ack {
                let node = &mut self.nodes[n];
                node.phase = Phase::WaitAck;
                node.gen += 1;
                let gen = node.gen;
                self.q.schedule_in(self.timings.ack_timeout, Ev::AckTimeout { node: n, gen });
            } else {
                if meta.what == What::JoinReq {
                    let d = n - 1;
                    let attempt = self.devs[d].join_attempts;
                    self.q
                        .schedule_in(self.timings.join_latency + self.timings.ack_timeout, Ev::JoinTimeout { dev: d, attempt });
                }
                self.complete(n, true);
            }
        }
        for r in recs {
            self.on_rx(r.node.0 as usize, &meta, r.outcome);
        }
        if response && n > 0 {
            self.maybe_sleep(n - 1);
        }
    }

    pub(crate) fn on_respond(&mut self, n: usize, frame: Frame, what: What) {
        let now = self.now();
        let id = NodeId(n as u32);
        if what == What::JoinAck && (self.medium.carrier_busy(id, now, SimTime::ZERO) || self.medium.transmitting(id, now)) {
            self.nodes[0].queue.push_front(OutFrame {
                frame,
                needs_ack: false,
                what,
                uid: None,
                cmd: None,
            });
            self.kick(0);
            return;
        }
        if self.medium.transmitting(id, now) || (n > 0 && self.devs[n - 1].radio != Radio::Awake) {
            let name = self.node_name(n);
            self.emit(&name, "mac.respond_skip", &[("what", json!(what.label())), ("seq", json!(frame.seq))]);
            return;
        }
        self.start_tx(n, frame, what, None, true);
    }

    // ---- channel access ----

    pub(crate) fn kick(&mut self, n: usize) {
        if self.nodes[n].phase != Phase::Idle || self.nodes[n].queue.is_empty() {
            return;
        }
        if n > 0 && self.devs[n - 1].radio != Radio::Awake {
            self.wake(n - 1);
            return;
        }
        self.schedule_attempt(n);
    }

    /// Guaranteed-slot window usable by node `n` for its head frame.
    fn gts_window_for(&self, n: usize) -> Option<(u32, u32)> {
        if n == 0 || self.mode != MacMode::SelfOrganized {
            return None;
        }
        let d = &self.devs[n - 1];
        let head = self.nodes[n].queue.front()?;
        if head.what == What::JoinReq {
            return None;
        }
        d.gts_slot.map(|first| (first, d.gts_slots))
    }

    fn exchange_len(&self, f: &OutFrame) -> SimTime {
        let air = self.air(&f.frame);
        match f.what {
            What::JoinReq => self.timings.join_latency + self.timings.ack_timeout,
            _ if f.needs_ack => air + self.ack_guard,
            _ => air,
        }
    }

    fn schedule_attempt(&mut self, n: usize) {
        let now = self.now();
        let node = &mut self.nodes[n];
        node.phase = Phase::Backoff;
        node.gen += 1;
        let gen = node.gen;
        if self.mode == MacMode::Naive {
            self.at(now, Ev::Attempt { node: n, gen });
            return;
        }
        let head = self.nodes[n].queue.front().expect("non-empty queue").clone();
        let exchange = self.exchange_len(&head);
        if let Some((first, count)) = self.gts_window_for(n) {
            let mut sf = self.superframe.start_of(now);
            for _ in 0..4 {
                let (start, _) = self.superframe.gts_window(sf, first);
                let (_, end) = self.superframe.gts_window(sf, first + count - 1);
                if start >= now && start + exchange <= end {
                    self.at(start, Ev::Attempt { node: n, gen });
                    return;
                }
                sf = sf + self.superframe.period;
            }
        }
        let (mut retries, busy) = (self.nodes[n].retries, self.nodes[n].busy);
        if n > 0 && self.nodes[n].queue.front().is_some_and(|f| f.what == What::JoinReq) {
            retries = retries.max(self.devs[n - 1].join_attempts.saturating_sub(1));
        }
        let t = now + self.timings.draw_backoff(&mut self.rng, retries, busy);
        if self.superframe.fits_in_cap(t, exchange) {
            self.at(t, Ev::Attempt { node: n, gen });
            return;
        }
        let cap = self.superframe.next_cap_start(now);
        let t2 = cap + self.timings.draw_backoff(&mut self.rng, retries, busy);
        let t = if self.superframe.fits_in_cap(t2, exchange) { t2 } else { cap };
        self.at(t, Ev::Attempt { node: n, gen });
    }

    fn in_own_gts(&self, n: usize, t: SimTime) -> bool {
        let Some((first, count)) = self.gts_window_for(n) else {
            return false;
        };
        let sf = self.superframe.start_of(t);
        let (start, _) = self.superframe.gts_window(sf, first);
        let (_, end) = self.superframe.gts_window(sf, first + count - 1);
        t >= start && t < end
    }

    pub(crate) fn on_attempt(&mut self, n: usize, gen: u64) {
        if self.nodes[n].gen != gen || self.nodes[n].phase != Phase::Backoff {
            return;
        }
        let now = self.now();
        let id = NodeId(n as u32);
        if n > 0 && self.devs[n - 1].radio != Radio::Awake {
            self.nodes[n].phase = Phase::Idle;
            self.kick(n);
            return;
        }
        let csma = self.mode == MacMode::SelfOrganized && !self.in_own_gts(n, now);
        if self.medium.transmitting(id, now) || (csma && self.medium.carrier_busy(id, now, self.ack_guard)) {
            let node = &mut self.nodes[n];
            node.busy += 1;
            if node.busy > MAX_BUSY_PER_ATTEMPT {
                node.busy = 0;
                node.retries += 1;
                let retries = node.retries;
                let seq = node.queue.front().map(|f| f.frame.seq);
                let name = self.node_name(n);
                self.emit(&name, "mac.cca_fail", &[("seq", json!(seq)), ("retry", json!(retries))]);
                if retries > self.timings.max_retries {
                    self.complete(n, false);
                    return;
                }
            }
            self.schedule_attempt(n);
            return;
        }
        let head = self.nodes[n].queue.front().expect("non-empty queue").clone();
        self.nodes[n].phase = Phase::Tx;
        self.start_tx(n, head.frame, head.what, head.uid, false);
    }

    pub(crate) fn on_ack_timeout(&mut self, n: usize, gen: u64) {
        if self.nodes[n].gen != gen || self.nodes[n].phase != Phase::WaitAck {
            return;
        }
        let node = &mut self.nodes[n];
        node.retries += 1;
        let retries = node.retries;
        let head = node.queue.front().expect("waiting frame");
        let (seq, what, uid) = (head.frame.seq, head.what, head.uid);
        let name = self.node_name(n);
        self.emit(
            &name,
            "mac.retry",
            &[("seq", json!(seq)), ("what", json!(what.label())), ("retry", json!(retries)), ("uid", json!(uid))],
        );
        if retries > self.timings.max_retries {
            self.complete(n, false);
        } else {
            self.schedule_attempt(n);
        }
    }

    /// Finishes the head frame of node `n`.
    fn complete(&mut self, n: usize, ok: bool) {
        let node = &mut self.nodes[n];
        let Some(of) = node.queue.pop_front() else { return };
        node.phase = Phase::Idle;
        node.retries = 0;
        node.busy = 0;
        node.gen += 1;
        if !ok {
            let name = self.node_name(n);
            self.emit(
                &name,
                "mac.fail",
                &[
                    ("what", json!(of.what.label())),
                    ("seq", json!(of.frame.seq)),
                    ("dst", json!(of.frame.dst)),
                    ("uid", json!(of.uid)),
                ],
            );
            if let Some(cmd) = of.cmd {
                self.emit("coord", "net.drop", &[("addr", json!(of.frame.dst)), ("gw_cmd", json!(cmd))]);
                if let Some(res) = self.gateway.commands.fail(cmd, GatewayError::DeliveryFailed(of.frame.dst)) {
                    self.send_resolution(res);
                }
            }
            if of.what == What::JoinReq {
                self.join_retry(n - 1);
            }
        }
        self.kick(n);
        if n > 0 {
            self.maybe_sleep(n - 1);
        }
    }

    fn enqueue(&mut self, n: usize, f: OutFrame) {
        let q = &mut self.nodes[n].queue;
        q.push_back(f);
        // Never evict the head: it may be on the air.
        if q.len() > MAC_QUEUE_CAP {
            let dropped = q.remove(1).expect("long queue");
            let name = self.node_name(n);
            self.emit(
                &name,
                "mac.queue_drop",
                &[("what", json!(dropped.what.label())), ("seq", json!(dropped.frame.seq)), ("uid", json!(dropped.uid))],
            );
        }
        self.kick(n);
    }

    // ---- sleep schedule ----

    fn wake(&mut self, d: usize) {
        if self.devs[d].radio != Radio::Sleep {
            return;
        }
        self.devs[d].radio = Radio::Waking;
        self.devs[d].wake_started = self.now();
        self.set_radio_state(d + 1, RadioState::RxListen);
        let name = self.devs[d].name.clone();
        self.emit(&name, "mac.wake", &[]);
        self.q.schedule_in(self.timings.wake_latency, Ev::WakeReady { dev: d });
    }

    pub(crate) fn on_wake_ready(&mut self, d: usize) {
        if self.devs[d].radio != Radio::Waking {
            return;
        }
        let now = self.now();
        self.devs[d].radio = Radio::Awake;
        let name = self.devs[d].name.clone();
        let latency = now.saturating_sub(self.devs[d].wake_started).as_micros();
        self.emit(&name, "mac.awake", &[("latency_us", json!(latency))]);
        self.medium.set_listening(NodeId((d + 1) as u32), Some(now));
        self.kick(d + 1);
        self.maybe_sleep(d);
    }

    fn extend_listen(&mut self, d: usize) {
        let dev = &mut self.devs[d];
        if !dev.battery {
            return;
        }
        let until = self.q.now() + LISTEN_WINDOW;
        if until > dev.listen_until {
            dev.listen_until = until;
            dev.listen_gen += 1;
            let gen = dev.listen_gen;
            self.at(until, Ev::ListenEnd { dev: d, gen });
        }
    }

    pub(crate) fn maybe_sleep(&mut self, d: usize) {
        let now = self.now();
        let n = d + 1;
        let dev = &self.devs[d];
        if !dev.battery
            || dev.radio != Radio::Awake
            || self.nodes[n].phase != Phase::Idle
            || !self.nodes[n].queue.is_empty()
            || now < dev.listen_until
            || matches!(dev.join, JoinState::Scanning | JoinState::Joining)
            || self.medium.transmitting(NodeId(n as u32), now)
        {
            return;
        }
        self.devs[d].radio = Radio::Sleep;
        self.medium.set_listening(NodeId(n as u32), None);
        self.set_radio_state(n, RadioState::Sleep);
    }

    // ---- beacons ----

    pub(crate) fn on_beacon(&mut self) {
        let now = self.now();
        let info = BeaconInfo {
            net_id: self.net_id,
            permit_join: self.coord.registry.permit_join(),
            superframe_ms: (self.timings.superframe_period.as_micros() / 1000) as u16,
            slot_count: self.timings.slot_count as u8,
            gts_slot_count: self.timings.gts_slot_count as u8,
        };
        let seq = self.coord.beacon_seq;
        self.coord.beacon_seq = seq.wrapping_add(1);
        if !self.medium.transmitting(NodeId(0), now) {
            let f = Frame::new(FrameType::Beacon, self.net_id, COORDINATOR_ADDR, BROADCAST_ADDR, seq, info.encode());
            self.start_tx(0, f, What::Beacon, None, true);
        }
        self.q.schedule_in(self.superframe.period, Ev::Beacon);
    }

    // ---- reception ----

    fn on_rx(&mut self, rx: usize, meta: &TxMeta, outcome: RxOutcome) {
        let f = &meta.frame;
        let addressed = if rx == 0 {
            f.src != COORDINATOR_ADDR
        } else {
            f.src == COORDINATOR_ADDR && self.devs[rx - 1].addr == Some(f.dst)
        };
        if outcome == RxOutcome::Corrupted {
            if addressed {
                let name = self.node_name(rx);
                self.emit(
                    &name,
                    "rf.corrupt",
                    &[("src", json!(f.src)), ("seq", json!(f.seq)), ("what", json!(meta.what.label())), ("uid", json!(meta.uid))],
                );
            }
            return;
        }
        if f.net_id != self.net_id {
            return;
        }
        if rx == 0 {
            self.coord_rx(meta);
        } else {
            self.dev_rx(rx - 1, meta);
        }
    }

    fn coord_rx(&mut self, meta: &TxMeta) {
        let now = self.now();
        let f = &meta.frame;
        match f.frame_type {
            FrameType::JoinReq => {
                let Ok(req) = JoinRequest::decode(&f.payload) else { return };
                let Some(d) = req.device_id.checked_sub(DEVICE_ID_BASE).map(|i| i as usize).filter(|i| *i < self.devs.len()) else {
                    return;
                };
                let name = self.devs[d].name.clone();
                self.emit("coord", "net.join_req", &[("device", json!(name)), ("device_id", json!(req.device_id))]);
                let (addr, status) = match self.coord.registry.addr_of(req.device_id) {
                    Some(a) => (a, JoinStatus::Accepted),
                    None => match self.coord.registry.join(self.devs[d].terminal.descriptor.clone()) {
                        Ok(a) => {
                            self.coord.dev_of_addr.insert(a, d);
                            self.emit("coord", "net.assign", &[("device", json!(name)), ("addr", json!(a))]);
                            (a, JoinStatus::Accepted)
                        }
                        Err(NetError::JoinNotPermitted) => (0, JoinStatus::NotPermitted),
                        Err(_) => (0, JoinStatus::Capacity),
                    },
                };
                let ack = JoinAck {
                    device_id: req.device_id,
                    addr,
                    status,
                };
                let seq = self.coord.seq_to[BROADCAST_ADDR as usize];
                self.coord.seq_to[BROADCAST_ADDR as usize] = seq.wrapping_add(1);
                let frame = Frame::new(FrameType::JoinAck, self.net_id, COORDINATOR_ADDR, BROADCAST_ADDR, seq, ack.encode());
                let air = self.air(&frame);
                let at = (meta.start + self.timings.join_latency)
                    .saturating_sub(air)
                    .max(now + self.timings.turnaround);
                self.at(
                    at,
                    Ev::Respond {
                        node: 0,
                        frame,
                        what: What::JoinAck,
                    },
                );
            }
            FrameType::Data => {
                let src = f.src;
                if f.dst != COORDINATOR_ADDR || !self.coord.registry.contains(src) {
                    return;
                }
                if self.mode == MacMode::SelfOrganized {
                    let pending = self.coord.registry.pending(src)
                        + self.nodes[0].queue.iter().filter(|o| o.frame.dst == src && o.what == What::Downlink).count();
                    let ack = Frame::ack_for(f, vec![pending.min(255) as u8]);
                    self.at(
                        now + self.timings.turnaround,
                        Ev::Respond {
                            node: 0,
                            frame: ack,
                            what: What::Ack,
                        },
                    );
                }
                if self.nodes[0].dedup.accept(self.net_id, src, f.seq) {
                    self.upper_rx(src, f.seq, &f.payload, meta.uid);
                } else {
                    self.emit("coord", "mac.dup", &[("src", json!(src)), ("seq", json!(f.seq)), ("uid", json!(meta.uid))]);
                }
                let mut released = false;
                while let Some(p) = self.coord.registry.pop_indirect(src) {
                    let frame = Frame::data(self.net_id, COORDINATOR_ADDR, src, p.seq, p.payload);
                    self.nodes[0].queue.push_back(OutFrame {
                        frame,
                        needs_ack: self.mode == MacMode::SelfOrganized,
                        what: What::Downlink,
                        uid: None,
                        cmd: p.tag,
                    });
                    released = true;
                }
                if released {
                    self.kick(0);
                }
            }
            FrameType::Ack => {
                let node = &self.nodes[0];
                let matches = node.phase == Phase::WaitAck
                    && node.queue.front().is_some_and(|h| h.frame.dst == f.src && h.frame.seq == f.seq);
                if matches {
                    self.complete(0, true);
                }
            }
            _ => {}
        }
    }

    fn upper_rx(&mut self, src: u8, seq: u8, payload: &[u8], uid: Option<u64>) {
        let now = self.now();
        if payload.is_empty() {
            return;
        }
        let msg = match DeviceMessage::decode(payload) {
            Ok(m) => m,
            Err(e) => {
                self.emit("coord", "up.bad", &[("addr", json!(src)), ("error", json!(e.to_string()))]);
                return;
            }
        };
        self.emit("coord", "up.rx", &[("addr", json!(src)), ("seq", json!(seq)), ("uid", json!(uid)), ("tlv", json!(msg.tlv_type as u8))]);
        match msg.tlv_type {
            TlvType::Report => {
                let name = self.coord.dev_of_addr.get(&src).map(|d| self.devs[*d].name.clone());
                let cause = msg.report_header().map(|(_, c, _)| c);
                let kind = if cause == Some(ReportCause::Periodic) { "REPORT" } else { "STATE" };
                let state = self.coord.dev_of_addr.get(&src).map(|d| self.devs[*d].terminal.state_map());
                self.panel_push(kind, json!({ "addr": src, "device": name, "state": state, "tlv": hex::encode(&payload) }));
                if let Some(res) = self.gateway.commands.on_report(src, &msg) {
                    self.send_resolution(res);
                }
            }
            TlvType::Alarm => {
                if let Some((alarm, pushes)) = self.gateway.alarms.ingest(src, seq, &msg, now) {
                    self.emit(
                        "gateway",
                        "alarm.raise",
                        &[("alarm_id", json!(alarm.alarm_id)), ("addr", json!(src)), ("kind", json!(alarm.kind)), ("rule", json!(alarm.rule))],
                    );
                    self.panel_push("ALARM", serde_json::to_value(&alarm).expect("serializable"));
                    for (who, batch) in pushes {
                        self.emit("gateway", "alarm.send", &[("to", json!(who.to_string())), ("count", json!(batch.alarms.len()))]);
                        self.gateway_send(who, crate::wan::EnvelopeKind::Alarm, serde_json::to_value(batch).expect("serializable"));
                    }
                }
            }
            _ => {}
        }
    }

    fn dev_rx(&mut self, d: usize, meta: &TxMeta) {
        let now = self.now();
        let n = d + 1;
        let f = &meta.frame;
        match f.frame_type {
            FrameType::Beacon => {
                if self.devs[d].join != JoinState::Scanning {
                    return;
                }
                let Ok(info) = BeaconInfo::decode(&f.payload) else { return };
                if info.net_id != self.net_id || !info.permit_join {
                    return;
                }
                let latency = now - self.devs[d].scan_started;
                let name = self.devs[d].name.clone();
                self.emit(&name, "net.discover", &[("latency_us", json!(latency.as_micros()))]);
                self.devs[d].join = JoinState::Joining;
                self.send_join_req(d);
            }
            FrameType::JoinAck => {
                if self.devs[d].join != JoinState::Joining {
                    return;
                }
                let Ok(ack) = JoinAck::decode(&f.payload) else { return };
                if ack.device_id != self.devs[d].terminal.descriptor.device_id {
                    return;
                }
                let name = self.devs[d].name.clone();
                if ack.status == JoinStatus::Accepted {
                    let latency = self.devs[d].join_req_start.map(|s| now - s);
                    self.on_joined(d, ack.addr, latency);
                } else {
                    self.emit(&name, "net.join_reject", &[("status", json!(format!("{:?}", ack.status)))]);
                    self.devs[d].join = JoinState::Failed;
                    self.maybe_sleep(d);
                }
            }
            FrameType::Data => {
                if f.src != COORDINATOR_ADDR || self.devs[d].addr != Some(f.dst) {
                    return;
                }
                self.extend_listen(d);
                if self.mode == MacMode::SelfOrganized {
                    let ack = Frame::ack_for(f, Vec::new());
                    self.at(
                        now + self.timings.turnaround,
                        Ev::Respond {
                            node: n,
                            frame: ack,
                            what: What::Ack,
                        },
                    );
                }
                let name = self.devs[d].name.clone();
                if !self.nodes[n].dedup.accept(self.net_id, COORDINATOR_ADDR, f.seq) {
                    self.emit(&name, "mac.dup", &[("src", json!(f.src)), ("seq", json!(f.seq))]);
                    return;
                }
                let msg = match DeviceMessage::decode(&f.payload) {
                    Ok(m) => m,
                    Err(e) => {
                        self.emit(&name, "dev.reject", &[("seq", json!(f.seq)), ("error", json!(e.to_string()))]);
                        return;
                    }
                };
                match self.devs[d].terminal.apply_command(COORDINATOR_ADDR, f.seq, &msg) {
                    Ok(out) => {
                        self.emit(
                            &name,
                            "dev.apply",
                            &[
                                ("seq", json!(f.seq)),
                                ("changed", json!(out.changed)),
                                ("duplicate", json!(out.duplicate)),
                                ("tlv", json!(hex::encode(&f.payload))),
                            ],
                        );
                        if let Some(ack) = out.ack {
                            self.uplink(d, &ack, What::CmdAck, false);
                        }
                    }
                    Err(e) => {
                        let tlv = hex::encode(&f.payload);
                        self.emit(&name, "dev.reject", &[("seq", json!(f.seq)), ("error", json!(e.to_string())), ("tlv", json!(tlv))]);
                    }
                }
            }
            FrameType::Ack => {
                if self.devs[d].addr != Some(f.dst) {
                    return;
                }
                let node = &self.nodes[n];
                let matches = node.phase == Phase::WaitAck && node.queue.front().is_some_and(|h| h.frame.seq == f.seq);
                if !matches {
                    return;
                }
                let p = self.scenario.faults.ack_loss_p;
                if p > 0.0 && self.fault_rng.chance(p) {
                    let name = self.devs[d].name.clone();
                    self.emit(&name, "fault.ack_lost", &[("seq", json!(f.seq))]);
                    return;
                }
                let pending = f.payload.first().copied().unwrap_or(0);
                if pending > 0 {
                    self.extend_listen(d);
                }
                self.complete(n, true);
            }
            _ => {}
        }
    }

    // ---- joining ----

    pub(crate) fn on_dev_start(&mut self, d: usize) {
        let name = self.devs[d].name.clone();
        self.emit(&name, "dev.start", &[("battery", json!(self.devs[d].battery))]);
        self.begin_join(d);
    }

    /// Scheduled after a failed join: scan again from scratch.
    pub(crate) fn on_rejoin(&mut self, d: usize) {
        if self.devs[d].join != JoinState::Failed || self.phase != RunPhase::Running {
            return;
        }
        let name = self.devs[d].name.clone();
        self.emit(&name, "net.rejoin", &[]);
        self.begin_join(d);
    }

    fn begin_join(&mut self, d: usize) {
        let now = self.now();
        let name = self.devs[d].name.clone();
        if self.devs[d].battery {
            self.devs[d].radio = Radio::Awake;
            self.medium.set_listening(NodeId((d + 1) as u32), Some(now));
            self.set_radio_state(d + 1, RadioState::RxListen);
        }
        if self.scenario.join == JoinMode::Preprovisioned || self.mode == MacMode::Naive {
            match self.coord.registry.join(self.devs[d].terminal.descriptor.clone()) {
                Ok(addr) => {
                    self.coord.dev_of_addr.insert(addr, d);
                    self.emit("coord", "net.assign", &[("device", json!(name)), ("addr", json!(addr))]);
                    self.on_joined(d, addr, None);
                }
                Err(e) => {
                    self.emit(&name, "net.join_reject", &[("status", json!(e.to_string()))]);
                    self.devs[d].join = JoinState::Failed;
                    self.maybe_sleep(d);
                }
            }
            return;
        }
        self.devs[d].join = JoinState::Scanning;
        self.devs[d].scan_started = now;
        self.devs[d].join_attempts = 0;
        let epoch = self.devs[d].epoch;
        self.q.schedule_in(self.timings.scan_timeout, Ev::ScanTimeout { dev: d, epoch });
    }

    pub(crate) fn on_scan_timeout(&mut self, d: usize, epoch: u32) {
        if self.devs[d].epoch != epoch || self.devs[d].join != JoinState::Scanning {
            return;
        }
        let name = self.devs[d].name.clone();
        self.devs[d].join_attempts += 1;
        if self.devs[d].join_attempts > JOIN_RETRIES {
            self.emit(&name, "net.join_fail", &[("reason", json!("no beacon"))]);
            self.join_failed(d);
            return;
        }
        self.emit(&name, "net.scan_timeout", &[]);
        self.q.schedule_in(self.timings.scan_timeout, Ev::ScanTimeout { dev: d, epoch });
    }

    fn send_join_req(&mut self, d: usize) {
        let n = d + 1;
        self.devs[d].join_attempts += 1;
        let req = JoinRequest {
            device_id: self.devs[d].terminal.descriptor.device_id,
            kind: self.devs[d].terminal.spec().id,
        };
        let seq = self.nodes[n].next_seq;
        self.nodes[n].next_seq = seq.wrapping_add(1);
        let frame = Frame::new(FrameType::JoinReq, self.net_id, BROADCAST_ADDR, COORDINATOR_ADDR, seq, req.encode());
        self.enqueue(
            n,
            OutFrame {
                frame,
                needs_ack: false,
                what: What::JoinReq,
                uid: None,
                cmd: None,
            },
        );
    }

    pub(crate) fn on_join_timeout(&mut self, d: usize, attempt: u32) {
        if self.devs[d].join != JoinState::Joining || self.devs[d].join_attempts != attempt {
            return;
        }
        self.join_retry(d);
    }

    fn join_failed(&mut self, d: usize) {
        self.devs[d].join = JoinState::Failed;
        self.maybe_sleep(d);
        let jitter = self.timings.backoff_unit.mul(self.rng.draw_range(0, REJOIN_SPREAD_UNITS));
        self.q.schedule_in(REJOIN_DELAY + jitter, Ev::Rejoin { dev: d });
    }

    fn join_retry(&mut self, d: usize) {
        let name = self.devs[d].name.clone();
        if self.devs[d].join_attempts > JOIN_RETRIES {
            self.emit(&name, "net.join_fail", &[("reason", json!("no join ack"))]);
            self.join_failed(d);
            return;
        }
        self.emit(&name, "net.join_retry", &[("attempt", json!(self.devs[d].join_attempts))]);
        self.send_join_req(d);
    }

    fn on_joined(&mut self, d: usize, addr: u8, latency: Option<SimTime>) {
        let now = self.now();
        let dev = &mut self.devs[d];
        dev.addr = Some(addr);
        dev.join = JoinState::Joined;
        dev.terminal.descriptor.addr = Some(addr);
        let name = dev.name.clone();
        let mut detail = vec![("addr", json!(addr))];
        if let Some(l) = latency {
            detail.push(("latency_us", json!(l.as_micros())));
        }
        self.emit(&name, "net.joined", &detail);
        if self.devs[d].gts_slots > 0 && self.mode == MacMode::SelfOrganized {
            match self.coord.gts.reserve(addr, self.devs[d].gts_slots as usize) {
                Ok(g) => {
                    self.devs[d].gts_slot = g.slots.first().copied();
                    self.devs[d].gts_slots = g.slots.len() as u32;
                    self.emit(&name, "mac.gts_grant", &[("slots", json!(g.slots))]);
                }
                Err(e) => self.emit(&name, "mac.gts_denied", &[("error", json!(e.to_string()))]),
            }
        }
        let epoch = self.devs[d].epoch;
        if let Some(iv) = self.devs[d].report_interval {
            let phase = SimTime(self.sched_rng.draw_range(0, iv.as_micros().saturating_sub(1)));
            self.at(now + phase, Ev::Report { dev: d, epoch });
        }
        if let Some(iv) = self.devs[d].poll_interval {
            let phase = SimTime(self.sched_rng.draw_range(0, iv.as_micros().saturating_sub(1)));
            self.at(now + phase, Ev::Poll { dev: d, epoch });
        }
        self.panel_push("STATE", json!({ "device": name, "addr": addr, "joined": true }));
        self.maybe_sleep(d);
    }

    // ---- application traffic ----

    /// Queues an application message from device `d` to the coordinator.
    fn uplink(&mut self, d: usize, msg: &DeviceMessage, what: What, burst: bool) {
        let n = d + 1;
        let Some(addr) = self.devs[d].addr else { return };
        let seq = self.nodes[n].next_seq;
        self.nodes[n].next_seq = seq.wrapping_add(1);
        let uid = self.next_uid;
        self.next_uid += 1;
        let frame = Frame::data(self.net_id, addr, COORDINATOR_ADDR, seq, msg.encode().expect("terminal messages fit"));
        let name = self.devs[d].name.clone();
        self.emit(
            &name,
            "up.gen",
            &[("addr", json!(addr)), ("seq", json!(seq)), ("uid", json!(uid)), ("what", json!(what.label())), ("burst", json!(burst))],
        );
        self.enqueue(
            n,
            OutFrame {
                frame,
                needs_ack: self.mode == MacMode::SelfOrganized,
                what,
                uid: Some(uid),
                cmd: None,
            },
        );
    }

    pub(crate) fn on_report_timer(&mut self, d: usize, epoch: u32) {
        if self.devs[d].epoch != epoch || self.devs[d].join != JoinState::Joined || self.phase != RunPhase::Running {
            return;
        }
        let msg = self.devs[d].terminal.periodic_report();
        self.uplink(d, &msg, What::Report, false);
        if let Some(iv) = self.devs[d].report_interval {
            self.q.schedule_in(iv, Ev::Report { dev: d, epoch });
        }
    }

    pub(crate) fn on_poll_timer(&mut self, d: usize, epoch: u32) {
        if self.devs[d].epoch != epoch || self.devs[d].join != JoinState::Joined {
            return;
        }
        let n = d + 1;
        if self.nodes[n].queue.is_empty() {
            let addr = self.devs[d].addr.expect("joined");
            let seq = self.nodes[n].next_seq;
            self.nodes[n].next_seq = seq.wrapping_add(1);
            let frame = Frame::data(self.net_id, addr, COORDINATOR_ADDR, seq, Vec::new());
            self.enqueue(
                n,
                OutFrame {
                    frame,
                    needs_ack: self.mode == MacMode::SelfOrganized,
                    what: What::Poll,
                    uid: None,
                    cmd: None,
                },
            );
        }
        if let Some(iv) = self.devs[d].poll_interval {
            self.q.schedule_in(iv, Ev::Poll { dev: d, epoch });
        }
    }

    pub(crate) fn on_burst(&mut self, d: usize) {
        if self.devs[d].join != JoinState::Joined {
            return;
        }
        let msg = self.devs[d].terminal.periodic_report();
        self.uplink(d, &msg, What::Report, true);
    }

    pub(crate) fn on_env(&mut self, d: usize, values: std::collections::BTreeMap<String, i32>) {
        let name = self.devs[d].name.clone();
        let out = self.devs[d].terminal.sensor_step(&values);
        self.emit(&name, "dev.env", &[("values", json!(values)), ("alarms", json!(out.alarms.len()))]);
        for w in out.warnings {
            self.emit(&name, "dev.warn", &[("warning", json!(w))]);
        }
        for a in out.alarms {
            self.uplink(d, &a, What::Alarm, false);
        }
    }

    pub(crate) fn on_evict(&mut self, d: usize) {
        let Some(addr) = self.devs[d].addr else { return };
        let name = self.devs[d].name.clone();
        let dropped = self.coord.registry.evict(addr).unwrap_or_default();
        let _ = self.coord.gts.release(addr);
        self.coord.dev_of_addr.remove(&addr);
        let mut tags: Vec<u64> = dropped.iter().filter_map(|p| p.tag).collect();
        let coord_q = std::mem::take(&mut self.nodes[0].queue);
        let head_busy = self.nodes[0].phase != Phase::Idle;
        for (i, of) in coord_q.into_iter().enumerate() {
            if of.frame.dst == addr && of.what == What::Downlink && !(i == 0 && head_busy) {
                tags.extend(of.cmd);
            } else {
                self.nodes[0].queue.push_back(of);
            }
        }
        self.emit("coord", "net.evict", &[("device", json!(name)), ("addr", json!(addr)), ("dropped", json!(tags.len()))]);
        for cmd in tags {
            self.emit("coord", "net.drop", &[("addr", json!(addr)), ("gw_cmd", json!(cmd))]);
            if let Some(res) = self.gateway.commands.fail(cmd, GatewayError::UnknownDevice(addr)) {
                self.send_resolution(res);
            }
        }
        let dev = &mut self.devs[d];
        dev.addr = None;
        dev.join = JoinState::Idle;
        dev.epoch += 1;
        dev.gts_slot = None;
        dev.terminal.descriptor.addr = None;
        let n = d + 1;
        if self.nodes[n].phase == Phase::Idle {
            self.nodes[n].queue.clear();
        } else {
            self.nodes[n].queue.truncate(1);
        }
        self.kick(0);
        self.maybe_sleep(d);
    }

    /// Routes a gateway command TLV to device `addr`: the coordinator's
    /// queue for listening devices, the indirect queue for sleepy ones.
    pub(crate) fn coord_downlink(&mut self, addr: u8, tlv: Vec<u8>, cmd: u64) -> Result<(), GatewayError> {
        let d = *self.coord.dev_of_addr.get(&addr).ok_or(GatewayError::UnknownDevice(addr))?;
        let seq = self.coord.seq_to[addr as usize];
        self.coord.seq_to[addr as usize] = seq.wrapping_add(1);
        self.gateway.commands.bind_seq(cmd, seq);
        if self.devs[d].battery {
            let depth = self
                .coord
                .registry
                .enqueue_indirect(
                    addr,
                    PendingDownlink {
                        payload: tlv,
                        seq,
                        queued_at: self.now(),
                        tag: Some(cmd),
                    },
                )
                .map_err(|_| GatewayError::Busy(addr))?;
            self.emit("coord", "net.indirect", &[("addr", json!(addr)), ("seq", json!(seq)), ("depth", json!(depth))]);
        } else {
            let frame = Frame::data(self.net_id, COORDINATOR_ADDR, addr, seq, tlv);
            self.enqueue(
                0,
                OutFrame {
                    frame,
                    needs_ack: self.mode == MacMode::SelfOrganized,
                    what: What::Downlink,
                    uid: None,
                    cmd: Some(cmd),
                },
            );
        }
        Ok(())
    }
}
