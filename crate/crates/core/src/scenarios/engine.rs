use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::device::{auth_request, data_frame, DeviceKeys};
use super::report::{self, AttackOutcome, Outcome, RunReport};
use super::spec::{AttackKind, AttackSpec, PolicyTarget, ScenarioSpec};
use super::ScenarioError;
use crate::abac::{PolicyTemplate, Subject};
use crate::audit::AuditLog;
use crate::authn::{AuthFrame, AuthOp, Principal};
use crate::ecc::{Curve, CurvePoint, KeyPair};
use crate::gateway::{
    open_control, seal_control, Controller, GatewayConfig, JoinReply, JoinStatus, Module, Observation, ServiceFrame,
    ServiceOp, Verdict, SERVICE_PEER, SERVICE_STORAGE, STATUS_FAILED, STATUS_OK,
};
use crate::hash::{hmac_sha256, sha256};
use crate::mitigation::{AlertKind, AlertSubject, CmAction};
use crate::privacy::PlainReading;
use crate::simnet::{
    stream_rng, AdversaryAction, AdversaryScript, EventKind, FrameFilter, Network, NodeId, Port, SimEvent, Stream,
    Tick, Topology,
};
use crate::southbound::{decode, Action, FlowMatch, FlowMod, FlowTable, Message, MsgType, Packet, DATA_KIND};

const T_JOIN: u64 = 1;
const T_READING: u64 = 2;
const T_SERVICE: u64 = 3;
const T_STATS: u64 = 4;
const T_WINDOW: u64 = 5;
const T_PERIOD: u64 = 6;
const T_ATTACK: u64 = 7;

fn tag(kind: u64, data: u64) -> u64 {
    (kind << 32) | (data & 0xffff_ffff)
}

/// Offset of the message type byte in an encoded data frame.
const TYPE_OFFSET: usize = 12;
/// Priority of the forged entry in a route hijack.
const HIJACK_PRIORITY: u16 = 5000;

struct Agent {
    keys: DeviceKeys,
    joined: bool,
    join_at: Tick,
    traffic: ChaCha8Rng,
    behavior: ChaCha8Rng,
    crypto: ChaCha8Rng,
    next_request: u32,
    peer_cursor: usize,
    grant_until: Tick,
    auth_sent: Option<Tick>,
    /// Data frames received that were neither from the gateway nor meant
    /// for this device.
    diverted: Vec<(Tick, NodeId)>,
}

struct Head {
    table: FlowTable,
    revoked: BTreeSet<Port>,
    key: [u8; 32],
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub report: RunReport,
    pub audit: AuditLog,
}

pub struct Engine {
    spec: ScenarioSpec,
    curve: &'static Curve,
    net: Network,
    topo: Topology,
    gw: Controller,
    gw_pub: CurvePoint,
    heads: BTreeMap<NodeId, Head>,
    agents: BTreeMap<NodeId, Agent>,
    /// Value each device sent for each round.
    truth: BTreeMap<(NodeId, u32), u64>,
    gateway_packets: u64,
}

fn authn_key(curve: &Curve, gw: &KeyPair, label: &[u8], id: u32) -> [u8; 32] {
    hmac_sha256(&curve.encode_scalar(gw.secret().expose()), &[label, &id.to_be_bytes()])
}

impl Engine {
    pub fn new(spec: &ScenarioSpec) -> Result<Self, ScenarioError> {
        spec.validate()?;
        let spec = spec.clone();
        let curve = Curve::named(spec.curve);
        let mut net = Network::build_topology(&spec.topology).map_err(|e| ScenarioError::Invalid {
            field: "topology".into(),
            msg: e.to_string(),
        })?;
        let topo = net.topology().clone();
        let gw_keys = KeyPair::generate(curve, &mut stream_rng(spec.seed, NodeId::GATEWAY, Stream::Traffic));
        let gw_pub = *gw_keys.public();
        let heads: BTreeMap<NodeId, Head> = topo
            .heads()
            .map(|h| {
                let head = Head {
                    table: FlowTable::default(),
                    revoked: BTreeSet::new(),
                    key: authn_key(curve, &gw_keys, b"head", h.0),
                };
                (h, head)
            })
            .collect();
        let head_keys = heads.iter().map(|(h, s)| (*h, s.key)).collect();
        let victims_joining_late: BTreeMap<NodeId, Tick> = spec
            .attacks
            .iter()
            .filter(|a| a.kind == AttackKind::RogueJoin)
            .filter_map(|a| a.victim.map(|v| (v, a.end)))
            .collect();
        let mut agents = BTreeMap::new();
        let mut manifest = BTreeMap::new();
        for (i, d) in topo.devices().enumerate() {
            let mut crypto = stream_rng(spec.seed, d, Stream::Crypto);
            let bootstrap = KeyPair::generate(curve, &mut crypto);
            manifest.insert(d, curve.encode_point(bootstrap.public()));
            let join_at = victims_joining_late.get(&d).copied().unwrap_or(1 + i as Tick);
            agents.insert(
                d,
                Agent {
                    keys: DeviceKeys::new(d, bootstrap),
                    joined: false,
                    join_at,
                    traffic: stream_rng(spec.seed, d, Stream::Traffic),
                    behavior: stream_rng(spec.seed, d, Stream::Behavior),
                    crypto,
                    next_request: 0,
                    peer_cursor: 0,
                    grant_until: 0,
                    auth_sent: None,
                    diverted: Vec::new(),
                },
            );
        }
        let mut cfg = GatewayConfig::new(spec.modules.clone(), curve, spec.seed);
        cfg.key_lifetime = spec.key_lifetime;
        cfg.detector = spec.detector;
        cfg.trust = spec.trust;
        cfg.session_timeout = spec.session_timeout;
        cfg.grant_lifetime = spec.grant_lifetime;
        cfg.aggregators = spec.traffic.aggregators;
        cfg.aggregate = spec.traffic.aggregate;
        cfg.reading_period = spec.traffic.reading_period;
        cfg.service_timeout = (spec.traffic.reading_period / 2).max(4);
        for op in &spec.operators {
            cfg.roles.insert(*op, "operator".into());
        }
        for p in &spec.policies {
            match p.applies_to {
                PolicyTarget::Devices => {
                    cfg.device_template = PolicyTemplate {
                        name: "scenario".into(),
                        tree: p.tree.clone(),
                        effect: p.effect,
                    }
                }
                PolicyTarget::Node(n) => cfg.extra_policies.push((Subject::Node(n), p.tree.clone(), p.effect)),
                PolicyTarget::Flow(m) => cfg.extra_policies.push((Subject::Flow(m), p.tree.clone(), p.effect)),
            }
        }
        let gw = Controller::new(cfg, topo.clone(), gw_keys, manifest, head_keys).map_err(|e| ScenarioError::Invalid {
            field: "gateway".into(),
            msg: e.to_string(),
        })?;
        let script = adversary_script(&spec, &topo);
        net.attach_adversary(script).map_err(|e| ScenarioError::Invalid {
            field: "attacks".into(),
            msg: e.to_string(),
        })?;
        Ok(Engine {
            spec,
            curve,
            net,
            topo,
            gw,
            gw_pub,
            heads,
            agents,
            truth: BTreeMap::new(),
            gateway_packets: 0,
        })
    }

    fn schedule_all(&mut self) {
        let p = self.spec.traffic.reading_period;
        let w = self.spec.detector.window;
        let joins: Vec<(NodeId, Tick)> = self.agents.iter().map(|(d, a)| (*d, a.join_at)).collect();
        for (d, at) in joins {
            self.net.schedule_timer(d, at, tag(T_JOIN, 0));
            self.net.schedule_timer(d, p + reading_offset(d, p), tag(T_READING, 1));
            let sp = self.spec.traffic.service_period;
            if sp > 0 {
                self.net.schedule_timer(d, sp + (d.0 as Tick % sp), tag(T_SERVICE, 0));
            }
        }
        self.net.schedule_timer(NodeId::GATEWAY, p, tag(T_PERIOD, 0));
        if self.spec.modules.contains(Module::Mitigation) {
            self.net.schedule_timer(NodeId::GATEWAY, w, tag(T_WINDOW, 0));
            for h in self.topo.heads().collect::<Vec<_>>() {
                self.net.schedule_timer(h, w / 2, tag(T_STATS, 0));
            }
        }
        for (i, a) in self.spec.attacks.iter().enumerate() {
            if attacker_driven(a.kind) {
                self.net.schedule_timer(a.attacker(), a.start, tag(T_ATTACK, i as u64));
            }
        }
    }

    /// Runs the scenario to completion.
    pub fn run(mut self) -> RunOutput {
        log::info!(
            "running {} seed {} modules {} for {} ticks",
            self.spec.name,
            self.spec.seed,
            self.spec.modules,
            self.spec.duration
        );
        self.schedule_all();
        for t in 0..=self.spec.duration {
            let events = self.net.run_until(t);
            for ev in events {
                self.dispatch(t, ev);
            }
        }
        self.finish()
    }

    fn send(&mut self, src: NodeId, dst: NodeId, frame: Vec<u8>) {
        // links are fixed by the topology, so a failure here is a bug
        self.net.send(src, dst, frame).expect("engine sends only on existing links");
    }

    fn dispatch(&mut self, now: Tick, ev: SimEvent) {
        log::trace!("t={now} {:?} {}->{} {} bytes", ev.kind, ev.src, ev.dst, ev.payload.len());
        match ev.kind {
            EventKind::Deliver => {
                if ev.dst == NodeId::GATEWAY {
                    self.gateway_packets += 1;
                    let out = self.gw.handle(now, ev.src, &ev.payload);
                    self.emit(out);
                } else if self.topo.is_head(ev.dst) {
                    self.head_receive(now, ev.dst, ev.src, ev.payload);
                } else {
                    self.device_receive(now, ev.dst, ev.src, &ev.payload);
                }
            }
            EventKind::Timer => self.timer(now, ev.dst, ev.tag),
            EventKind::Drop | EventKind::Adversary => {}
        }
    }

    fn emit(&mut self, out: Vec<crate::gateway::Outbound>) {
        for o in out {
            self.send(NodeId::GATEWAY, o.head, o.frame);
        }
    }

    fn timer(&mut self, now: Tick, node: NodeId, t: u64) {
        let data = t & 0xffff_ffff;
        match t >> 32 {
            T_JOIN => self.device_join(now, node),
            T_READING => self.device_reading(now, node, data as u32),
            T_SERVICE => self.device_service(now, node),
            T_STATS => {
                let entries = self.heads[&node].table.stats();
                let frame = crate::southbound::encode(&Message::StatsReport { entries }).expect("stats fit");
                self.send(node, NodeId::GATEWAY, frame);
                self.net
                    .schedule_timer(node, now + self.spec.detector.window, tag(T_STATS, 0));
            }
            T_WINDOW => {
                let out = self.gw.on_window(now);
                self.emit(out);
                self.net
                    .schedule_timer(NodeId::GATEWAY, now + self.spec.detector.window, tag(T_WINDOW, 0));
            }
            T_PERIOD => {
                let out = self.gw.on_period(now);
                self.emit(out);
                self.net.schedule_timer(
                    NodeId::GATEWAY,
                    now + self.spec.traffic.reading_period,
                    tag(T_PERIOD, 0),
                );
            }
            T_ATTACK => self.attack_step(now, data as usize),
            _ => unreachable!("unknown timer kind"),
        }
    }

    fn head_receive(&mut self, now: Tick, head: NodeId, from: NodeId, frame: Vec<u8>) {
        if from == NodeId::GATEWAY {
            let key = self.spec.modules.contains(Module::AuthN).then_some(self.heads[&head].key);
            let Some(msg) = open_control(key.as_ref(), &frame) else {
                self.gw
                    .audit_mut()
                    .record(now, "head", "control_rejected", &[("head", &head), ("bytes", &frame.len())]);
                return;
            };
            match msg {
                Message::PacketOut { out_port, frame } => {
                    if let Some(d) = self.topo.device_at(head, out_port) {
                        self.send(head, d, frame);
                    }
                }
                Message::FlowMod(fm) => {
                    if let Err(e) = self.heads.get_mut(&head).expect("head").table.apply(&fm) {
                        self.gw.audit_mut().record(now, "head", "flow_mod_failed", &[("head", &head), ("error", &e)]);
                    }
                }
                Message::Revoke { nodes } => {
                    let ports: Vec<Port> = nodes
                        .iter()
                        .filter(|n| self.topo.head_of(**n) == Some(head))
                        .filter_map(|n| self.topo.port_of(*n))
                        .collect();
                    self.heads.get_mut(&head).expect("head").revoked.extend(ports);
                }
                _ => {}
            }
            return;
        }
        let Some(port) = self.topo.port_of(from) else {
            return;
        };
        if self.heads[&head].revoked.contains(&port) {
            return;
        }
        let packet_in = |frame: Vec<u8>| {
            crate::southbound::encode(&Message::PacketIn { in_port: port, frame }).expect("frame fits")
        };
        match decode(&frame) {
            Ok(Message::Data(pkt)) => {
                let action = self.heads.get_mut(&head).expect("head").table.match_packet(&pkt);
                match action {
                    Action::ToController => self.send(head, NodeId::GATEWAY, packet_in(frame)),
                    Action::Forward(0) => self.send(head, NodeId::GATEWAY, frame),
                    Action::Forward(p) => {
                        if let Some(d) = self.topo.device_at(head, p) {
                            self.send(head, d, frame);
                        }
                    }
                    Action::Drop => {}
                }
            }
            Ok(_) => self.send(head, NodeId::GATEWAY, packet_in(frame)),
            Err(_) => {}
        }
    }

    fn to_gateway(&mut self, node: NodeId, src: NodeId, msg_type: MsgType, payload: Vec<u8>) {
        let head = self.topo.head_of(node).expect("device has a head");
        self.send(node, head, data_frame(src, NodeId::GATEWAY, msg_type, payload));
    }

    fn device_join(&mut self, _now: Tick, node: NodeId) {
        let a = &self.agents[&node];
        if a.joined {
            return;
        }
        let frame = a.keys.join_frame(self.curve);
        let head = self.topo.head_of(node).expect("device has a head");
        self.send(node, head, frame);
    }

    fn device_reading(&mut self, now: Tick, node: NodeId, round: u32) {
        let p = self.spec.traffic.reading_period;
        self.net
            .schedule_timer(node, (round as Tick + 1) * p + reading_offset(node, p), tag(T_READING, round as u64 + 1));
        let private = self.spec.modules.contains(Module::Privacy);
        let max = self.spec.traffic.max_reading;
        let m = self.spec.traffic.aggregators;
        let curve = self.curve;
        let a = self.agents.get_mut(&node).expect("agent");
        if !a.joined {
            return;
        }
        let value = a.traffic.gen_range(1..=max);
        let Ok(payload) = a.keys.reading_payload(curve, round, value, m, now, private, &mut a.crypto) else {
            return;
        };
        self.truth.insert((node, round), value);
        self.to_gateway(node, node, MsgType::Reading, payload);
    }

    fn device_service(&mut self, now: Tick, node: NodeId) {
        let sp = self.spec.traffic.service_period;
        self.net.schedule_timer(node, now + sp, tag(T_SERVICE, 0));
        let authn = self.spec.modules.contains(Module::AuthN);
        let timeout = self.spec.session_timeout;
        let peers = self.topo.cluster_peers(node);
        let a = self.agents.get_mut(&node).expect("agent");
        if !a.joined || peers.is_empty() {
            return;
        }
        if authn && a.grant_until <= now {
            if a.auth_sent.is_none_or(|t| now >= t + timeout) {
                a.auth_sent = Some(now);
                let req = auth_request(node, SERVICE_PEER).encode();
                self.to_gateway(node, node, MsgType::Auth, req);
            }
            return;
        }
        let target = peers[a.peer_cursor % peers.len()];
        a.peer_cursor += 1;
        a.next_request += 1;
        let f = ServiceFrame::new(ServiceOp::Use, node, target, a.next_request);
        self.to_gateway(node, node, MsgType::Service, f.encode());
    }

    /// Probability `node` honours a service request at `now`.
    fn cooperation(&self, node: NodeId, now: Tick) -> f64 {
        self.spec
            .attacks
            .iter()
            .find(|a| a.kind == AttackKind::BadService && a.attackers.contains(&node) && a.start <= now && now < a.end)
            .map_or(self.spec.traffic.honest_cooperation, |a| a.cooperation)
    }

    fn device_receive(&mut self, now: Tick, node: NodeId, _from: NodeId, frame: &[u8]) {
        let Ok(Message::Data(pkt)) = decode(frame) else {
            return;
        };
        if pkt.src != NodeId::GATEWAY || pkt.dst != node {
            self.agents.get_mut(&node).expect("agent").diverted.push((now, pkt.src));
            return;
        }
        match pkt.msg_type {
            MsgType::Join => self.on_join_reply(now, node, &pkt),
            MsgType::Auth => self.on_auth_frame(now, node, &pkt),
            MsgType::Service => {
                let Some(f) = ServiceFrame::decode(&pkt.payload) else {
                    return;
                };
                if f.op == ServiceOp::Use && f.target == node {
                    let coop = self.cooperation(node, now);
                    let a = self.agents.get_mut(&node).expect("agent");
                    let ok = a.behavior.gen_bool(coop);
                    let mut r = ServiceFrame::new(ServiceOp::Response, node, f.principal, f.request);
                    r.status = if ok { STATUS_OK } else { STATUS_FAILED };
                    self.to_gateway(node, node, MsgType::Service, r.encode());
                }
            }
            _ => {}
        }
    }

    fn on_join_reply(&mut self, now: Tick, node: NodeId, pkt: &Packet) {
        let Some(reply) = JoinReply::decode(&pkt.payload) else {
            return;
        };
        let with_keys = self.spec.modules.contains(Module::KeyMgmt);
        let private = self.spec.modules.contains(Module::Privacy);
        let curve = self.curve;
        let gw_pub = self.gw_pub;
        let a = self.agents.get_mut(&node).expect("agent");
        if reply.status == JoinStatus::Accepted && a.joined {
            return;
        }
        match a.keys.accept(curve, &gw_pub, &reply, crate::privacy::SMC_MODULUS, with_keys, private) {
            Ok(()) => a.joined = true,
            Err(e) => self.gw.audit_mut().record(now, "device", "join_failed", &[("node", &node), ("why", &e)]),
        }
    }

    fn on_auth_frame(&mut self, now: Tick, node: NodeId, pkt: &Packet) {
        let Some(f) = AuthFrame::decode(&pkt.payload) else {
            return;
        };
        let grant_lifetime = self.spec.grant_lifetime;
        let margin = self.spec.traffic.reading_period;
        let impostor_of = self.impostor_target(node, now);
        let a = self.agents.get_mut(&node).expect("agent");
        let reply = match (f.op, f.principal) {
            (AuthOp::Challenge, Principal::Service(SERVICE_STORAGE)) if impostor_of.is_some() => {
                let mut proof = [0u8; 32];
                a.behavior.fill_bytes(&mut proof);
                let mut nonce = [0u8; 16];
                a.behavior.fill_bytes(&mut nonce);
                Some(AuthFrame {
                    op: AuthOp::Response,
                    principal: Principal::Node(impostor_of.expect("guarded")),
                    session: f.session,
                    nonce,
                    proof,
                })
            }
            (AuthOp::Challenge, Principal::Service(SERVICE_PEER)) => a.keys.answer(&f, &mut a.crypto),
            (AuthOp::Grant, Principal::Service(SERVICE_PEER)) => {
                a.grant_until = now + grant_lifetime.saturating_sub(margin);
                a.auth_sent = None;
                None
            }
            (AuthOp::Deny, _) => {
                a.auth_sent = None;
                None
            }
            _ => None,
        };
        if let Some(r) = reply {
            self.to_gateway(node, node, MsgType::Auth, r.encode());
        }
    }

    fn impostor_target(&self, node: NodeId, now: Tick) -> Option<NodeId> {
        self.spec
            .attacks
            .iter()
            .find(|a| a.kind == AttackKind::Impostor && a.attacker() == node && a.start <= now && now <= a.end + 10)
            .and_then(|a| a.victim)
    }

    fn attack_step(&mut self, now: Tick, idx: usize) {
        let a = self.spec.attacks[idx].clone();
        if now >= a.end {
            return;
        }
        let me = a.attacker();
        let victim = a.victim.unwrap_or(me);
        let round = (now / self.spec.traffic.reading_period) as u32;
        let mut again = true;
        match a.kind {
            AttackKind::Spoof => {
                let v = PlainReading {
                    round,
                    value: self.spec.traffic.max_reading,
                };
                self.to_gateway(me, victim, MsgType::Reading, v.encode());
            }
            AttackKind::Inject => {
                let mut junk = vec![0u8; 5];
                self.agents.get_mut(&me).expect("agent").behavior.fill_bytes(&mut junk);
                self.to_gateway(me, me, MsgType::Reading, junk);
            }
            AttackKind::Scan => {
                let n = self.agents.get_mut(&me).expect("agent").next_request;
                self.agents.get_mut(&me).expect("agent").next_request += 1;
                let dst = NodeId(2 + n % 32);
                let f = ServiceFrame::new(ServiceOp::Use, me, dst, n);
                let head = self.topo.head_of(me).expect("head");
                self.send(me, head, data_frame(me, dst, MsgType::Service, f.encode()));
            }
            AttackKind::UnauthorizedControl => {
                let c = crate::gateway::ControlFrame {
                    command: 1,
                    argument: victim.0,
                };
                self.to_gateway(me, me, MsgType::Control, c.encode());
            }
            AttackKind::StorageRead => {
                let f = ServiceFrame::new(ServiceOp::Read, me, victim, now as u32);
                self.to_gateway(me, me, MsgType::Service, f.encode());
            }
            AttackKind::StorageTamper => {
                let mut f = ServiceFrame::new(ServiceOp::Write, me, victim, now as u32);
                f.body = PlainReading { round, value: 0 }.encode();
                self.to_gateway(me, me, MsgType::Service, f.encode());
            }
            AttackKind::Impostor => {
                if self.spec.modules.contains(Module::AuthN) {
                    let req = auth_request(victim, SERVICE_STORAGE).encode();
                    self.to_gateway(me, me, MsgType::Auth, req);
                }
                let f = ServiceFrame::new(ServiceOp::Read, victim, victim, now as u32);
                self.to_gateway(me, me, MsgType::Service, f.encode());
            }
            AttackKind::RogueJoin => {
                let fake = KeyPair::generate(self.curve, &mut self.agents.get_mut(&me).expect("agent").crypto);
                let frame = crate::southbound::encode(&Message::JoinRequest {
                    node: victim,
                    pubkey: self.curve.encode_point(fake.public()),
                })
                .expect("join fits");
                let head = self.topo.head_of(me).expect("head");
                self.send(me, head, frame);
                again = false;
            }
            _ => again = false,
        }
        if again && now + (a.rate as Tick) < a.end {
            self.net.schedule_timer(me, now + a.rate as Tick, tag(T_ATTACK, idx as u64));
        }
    }

    fn finish(self) -> RunOutput {
        let outcomes: Vec<AttackOutcome> = (0..self.spec.attacks.len()).map(|i| self.evaluate(i)).collect();
        let mut violations = Vec::new();
        if let Err(e) = self.gw.check_registry(self.spec.duration) {
            violations.push(e);
        }
        let accounted: u64 = self.gw.flows().values().map(|f| f.packets).sum();
        let observed = self
            .gw
            .observations()
            .iter()
            .filter(|o| matches!(o, Observation::Packet { .. }))
            .count() as u64;
        if accounted != observed {
            violations.push(format!("flow accounting lost packets: {accounted} != {observed}"));
        }
        let trail = self.gw.audit().count("mitigation", "flow") + self.gw.audit().count("gateway", "flow");
        if trail as u64 != accounted {
            violations.push(format!("audit trail has {trail} flow records for {accounted} packets"));
        }
        for line in self.gw.audit().lines() {
            if let Some((_, comp, ev, kv)) = crate::audit::parse_line(line) {
                let aggregate = comp == "sink" && ev == "aggregate";
                if !aggregate && kv.iter().any(|(k, _)| k == "value" || k == "reading") {
                    violations.push(format!("reading value in audit: {line}"));
                    break;
                }
            }
        }
        for a in self.gw.alerts() {
            if !(a.evidence.observed as f64 > a.evidence.threshold) {
                violations.push(format!("alert {} evidence does not exceed its threshold", a.id));
            }
        }
        let (correct, wrong, failed) = self.sink_check();
        let digest = sha256(&[&self.net.log().to_bytes()]);
        log::info!(
            "{} finished: {} alerts, {} countermeasures, {} violations",
            self.spec.name,
            self.gw.alerts().len(),
            self.gw.countermeasures().len(),
            violations.len()
        );
        let report = report::build(
            &self.spec,
            &self.gw,
            outcomes,
            report::SinkSummary {
                closed: self.gw.sink().len() as u64,
                correct,
                wrong,
                failed,
            },
            self.net.log().events.len() as u64,
            self.gateway_packets,
            digest,
            violations,
        );
        RunOutput {
            report,
            audit: self.gw.audit().clone(),
        }
    }

    /// Closed rounds whose aggregate equals the sum of what their
    /// contributors sent, rounds that differ, and aborted rounds.
    fn sink_check(&self) -> (u64, u64, u64) {
        let (mut ok, mut bad, mut failed) = (0, 0, 0);
        for r in self.gw.sink() {
            match &r.result {
                Ok(agg) => {
                    if self.round_matches(r.round, &r.contributors, agg.sum) {
                        ok += 1;
                    } else {
                        bad += 1;
                    }
                }
                Err(_) => failed += 1,
            }
        }
        (ok, bad, failed)
    }

    fn round_matches(&self, round: u32, contributors: &[NodeId], sum: u64) -> bool {
        let mut expected = 0u64;
        for c in contributors {
            match self.truth.get(&(*c, round)) {
                Some(v) => expected += v,
                None => return false,
            }
        }
        expected == sum
    }

    /// Ticks at which the attack achieved what it was after.
    fn successes(&self, a: &AttackSpec) -> Vec<Tick> {
        let me = a.attacker();
        let victim = a.victim.unwrap_or(me);
        let obs = self.gw.observations();
        let in_attack = |t: Tick| t >= a.start;
        match a.kind {
            AttackKind::EavesdropDevice | AttackKind::EavesdropUplink => self
                .net
                .transcript()
                .iter()
                .filter(|r| self.recovers_plaintext(&r.payload, victim))
                .map(|r| r.tick)
                .collect(),
            AttackKind::Corrupt | AttackKind::Modify => {
                let first_round = (a.start / self.spec.traffic.reading_period) as u32;
                self.gw
                    .sink()
                    .iter()
                    .filter(|r| r.round >= first_round)
                    .filter(|r| match &r.result {
                        Ok(agg) => !self.round_matches(r.round, &r.contributors, agg.sum),
                        Err(_) => false,
                    })
                    .map(|r| r.closed_at)
                    .collect()
            }
            AttackKind::Spoof => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::Packet {
                        tick,
                        key,
                        origin: Some(o),
                        verdict: Verdict::Accepted,
                    } if *o == me && key.src == victim && in_attack(*tick) => Some(*tick),
                    _ => None,
                })
                .collect(),
            AttackKind::Inject => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::Packet {
                        tick,
                        key,
                        origin,
                        verdict,
                    } if origin.unwrap_or(key.src) == me && verdict.is_integrity_failure() && in_attack(*tick) => {
                        Some(*tick)
                    }
                    _ => None,
                })
                .collect(),
            AttackKind::Dos | AttackKind::Ddos => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::Packet { tick, key, origin, .. }
                        if a.attackers.contains(&origin.unwrap_or(key.src))
                            && key.msg_type == MsgType::Reading
                            && in_attack(*tick) =>
                    {
                        Some(*tick)
                    }
                    _ => None,
                })
                .collect(),
            AttackKind::Scan => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::Packet { tick, key, origin, .. }
                        if origin.unwrap_or(key.src) == me && key.msg_type == MsgType::Service && in_attack(*tick) =>
                    {
                        Some(*tick)
                    }
                    _ => None,
                })
                .collect(),
            AttackKind::UnauthorizedControl => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::ControlExecuted { tick, src, .. } if *src == me => Some(*tick),
                    _ => None,
                })
                .collect(),
            AttackKind::StorageRead => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::StorageRead {
                        tick, src, target, entries, ..
                    } if *src == me && *target == victim && *entries > 0 => Some(*tick),
                    _ => None,
                })
                .collect(),
            AttackKind::StorageTamper => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::StorageWrite { tick, src, target, .. } if *src == me && *target == victim => {
                        Some(*tick)
                    }
                    _ => None,
                })
                .collect(),
            AttackKind::BadService => {
                let cutoff = a.start + (a.end - a.start) / 2;
                obs.iter()
                    .filter_map(|o| match o {
                        Observation::Forwarded { tick, server, .. }
                            if a.attackers.contains(server) && *tick >= cutoff && *tick < a.end =>
                        {
                            Some(*tick)
                        }
                        _ => None,
                    })
                    .collect()
            }
            AttackKind::Impostor => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::StorageRead {
                        tick, src, principal, ..
                    } if *src == me && *principal == victim => Some(*tick),
                    Observation::Granted {
                        tick, src, principal, ..
                    } if *src == me && *principal == victim => Some(*tick),
                    _ => None,
                })
                .collect(),
            AttackKind::RogueJoin => obs
                .iter()
                .filter_map(|o| match o {
                    Observation::Registered { tick, node } if *node == victim && *tick < a.end => Some(*tick),
                    _ => None,
                })
                .collect(),
            AttackKind::RouteHijack => self.agents[&me]
                .diverted
                .iter()
                .filter(|(t, src)| *src == victim && in_attack(*t))
                .map(|(t, _)| *t)
                .collect(),
        }
    }

    /// Whether a tapped frame yields a reading of `victim` in the clear.
    fn recovers_plaintext(&self, frame: &[u8], victim: NodeId) -> bool {
        let pkt = match decode(frame) {
            Ok(Message::Data(p)) => p,
            Ok(Message::PacketIn { frame, .. }) => match decode(&frame) {
                Ok(Message::Data(p)) => p,
                _ => return false,
            },
            _ => return false,
        };
        if pkt.src != victim || pkt.msg_type != MsgType::Reading {
            return false;
        }
        match PlainReading::decode(&pkt.payload) {
            Ok(r) => self.truth.get(&(victim, r.round)) == Some(&r.value),
            Err(_) => false,
        }
    }

    fn alert_matches(&self, a: &AttackSpec, alert: &crate::mitigation::Alert) -> bool {
        let culprit = |n: &NodeId| a.attackers.contains(n);
        let by_origin = alert.origin.as_ref().is_some_and(culprit);
        let subject_node = |n: &NodeId| culprit(n) || by_origin;
        match (a.kind, &alert.kind, &alert.subject) {
            (AttackKind::Spoof | AttackKind::RogueJoin, AlertKind::Spoofing, AlertSubject::Node(n)) => subject_node(n),
            (AttackKind::Inject, AlertKind::Injection, AlertSubject::Node(n)) => subject_node(n),
            (AttackKind::Dos | AttackKind::Ddos, AlertKind::Dos, AlertSubject::Flow(k)) => culprit(&k.src) || by_origin,
            (AttackKind::Dos | AttackKind::Ddos, AlertKind::Ddos, AlertSubject::Target { flows, .. }) => {
                flows.iter().any(|k| culprit(&k.src))
            }
            (AttackKind::Scan, AlertKind::Scan, AlertSubject::Node(n)) => subject_node(n),
            (AttackKind::Impostor, AlertKind::Impersonation, AlertSubject::Node(n)) => subject_node(n),
            (AttackKind::RouteHijack, AlertKind::Spoofing, AlertSubject::Rule { head, matcher }) => {
                a.victim.and_then(|v| self.topo.head_of(v)) == Some(*head) && matcher.src == a.victim
            }
            _ => false,
        }
    }

    fn evaluate(&self, idx: usize) -> AttackOutcome {
        let a = &self.spec.attacks[idx];
        let w = self.spec.detector.window;
        let successes = self.successes(a);
        let alert = self
            .gw
            .alerts()
            .iter()
            .filter(|al| al.raised_at >= a.start && self.alert_matches(a, al))
            .min_by_key(|al| (al.raised_at, al.id));
        let outcome = match alert {
            Some(al) => Outcome::Detected {
                latency: al.raised_at - a.start,
            },
            None if successes.is_empty() => Outcome::Prevented,
            None => Outcome::Missed,
        };
        let matching: BTreeSet<u64> = self
            .gw
            .alerts()
            .iter()
            .filter(|al| al.raised_at >= a.start && self.alert_matches(a, al))
            .map(|al| al.id)
            .collect();
        let cm = self
            .gw
            .countermeasures()
            .iter()
            .filter(|c| matching.contains(&c.cm.cause) && !matches!(c.cm.action, CmAction::RevokeKeys(ref v) if v.is_empty()))
            .min_by_key(|c| c.tick);
        let after = cm.map_or(0, |c| {
            let quiet_from = (c.tick / w + 1) * w;
            successes.iter().filter(|t| **t >= quiet_from).count() as u64
        });
        let contained = cm.is_some() && after == 0;
        AttackOutcome {
            index: idx,
            kind: a.kind,
            attackers: a.attackers.clone(),
            victim: a.victim,
            start: a.start,
            end: a.end,
            outcome,
            contained,
            successes: successes.len() as u64,
            alert: alert.map(|al| al.id),
            countermeasure: cm.map(|c| c.cm.id),
            countermeasure_at: cm.map(|c| c.tick),
            after_countermeasure: after,
        }
    }
}

fn reading_offset(node: NodeId, period: Tick) -> Tick {
    node.0 as Tick % (period / 2).max(1)
}

/// Attacks played by the attacking device's own timer.
fn attacker_driven(kind: AttackKind) -> bool {
    matches!(
        kind,
        AttackKind::Spoof
            | AttackKind::Inject
            | AttackKind::Scan
            | AttackKind::UnauthorizedControl
            | AttackKind::StorageRead
            | AttackKind::StorageTamper
            | AttackKind::Impostor
            | AttackKind::RogueJoin
    )
}

fn reading_filter() -> FrameFilter {
    FrameFilter::new(vec![(0, DATA_KIND), (TYPE_OFFSET, MsgType::Reading.code())])
}

/// Link-level parts of the attacks, played by the simulator itself.
fn adversary_script(spec: &ScenarioSpec, topo: &Topology) -> AdversaryScript {
    let mut actions = Vec::new();
    let p = spec.traffic.reading_period;
    for a in &spec.attacks {
        let me = a.attacker();
        let victim = a.victim.unwrap_or(me);
        let head_of = |n: NodeId| topo.head_of(n).expect("attack nodes are devices");
        let rounds = ((a.end - a.start) / p + 1) as u32;
        match a.kind {
            AttackKind::EavesdropDevice => actions.push(AdversaryAction::Tap {
                src: victim,
                dst: head_of(victim),
            }),
            AttackKind::EavesdropUplink => actions.push(AdversaryAction::Tap {
                src: head_of(victim),
                dst: NodeId::GATEWAY,
            }),
            AttackKind::Corrupt => actions.push(AdversaryAction::Flip {
                src: victim,
                dst: head_of(victim),
                from: a.start,
                count: rounds,
                tail: 8,
                filter: reading_filter(),
            }),
            AttackKind::Modify => actions.push(AdversaryAction::Rewrite {
                src: victim,
                dst: head_of(victim),
                from: a.start,
                count: rounds,
                offset_from_end: 8,
                bytes: 9_999u64.to_be_bytes().to_vec(),
                filter: reading_filter(),
            }),
            AttackKind::Dos | AttackKind::Ddos => {
                for src in &a.attackers {
                    let frame = data_frame(
                        *src,
                        NodeId::GATEWAY,
                        MsgType::Reading,
                        PlainReading { round: 0, value: 1 }.encode(),
                    );
                    actions.push(AdversaryAction::Flood {
                        src: *src,
                        dst: head_of(*src),
                        start: a.start,
                        end: a.end,
                        per_tick: a.rate,
                        frame,
                    });
                }
            }
            AttackKind::RouteHijack => {
                let port = topo.port_of(me).expect("attacker is a device");
                let head = head_of(victim);
                let fm = FlowMod::add(
                    HIJACK_PRIORITY,
                    FlowMatch::exact(victim, NodeId::GATEWAY, MsgType::Reading),
                    if head_of(me) == head { Action::Forward(port) } else { Action::Drop },
                );
                actions.push(AdversaryAction::Inject {
                    src: NodeId::GATEWAY,
                    dst: head,
                    at: a.start,
                    frame: seal_control(None, &Message::FlowMod(fm)),
                });
            }
            _ => {}
        }
    }
    AdversaryScript::new(actions)
}

/// Runs `spec` and returns report and audit trail.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunOutput, ScenarioError> {
    Ok(Engine::new(spec)?.run())
}
