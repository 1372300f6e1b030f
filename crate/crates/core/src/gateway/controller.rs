use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use super::frames::{
    ControlFrame, JoinReply, JoinStatus, ServiceFrame, ServiceOp, SERVICE_PEER, SERVICE_STORAGE, STATUS_DENIED,
    STATUS_FAILED, STATUS_OK,
};
use super::{
    seal_control, AppliedCountermeasure, DeviceRecord, DeviceStatus, FlowRecord, GatewayError, Module, ModuleSet,
    Observation, SinkRecord, Verdict,
};
use crate::abac::{device_bindings, AccessDecision, AccessTree, AttrValue, AttributeSet, Effect, PolicyStore, PolicyTemplate, Subject};
use crate::audit::AuditLog;
use crate::authn::{compute_proof, AuthFrame, AuthOp, Authenticator, Principal, Role, SessionState};
use crate::ecc::{Curve, CurvePoint, KeyPair};
use crate::hash::hmac_sha256;
use crate::keymgmt::{seal_bundle, KeyBundle, KeyError, KeyManager};
use crate::mitigation::{Alert, CmAction, Countermeasure, Detector, DetectorConfig, Dispatcher, FlowEvent};
use crate::privacy::{
    open, AggregateMode, AggregateResult, AggregatorSet, CipherPacket, CredentialStore, PlainReading, SharedReading,
    SmcShareSet,
};
use crate::simnet::{derive_seed, stream_rng, NodeId, Stream, Tick, Topology};
use crate::southbound::{Action, FlowKey, FlowMatch, FlowMod, Message, MsgType, Packet, StatsEntry};
use crate::trust::{Decision, TrustConfig, TrustStore};

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    pub modules: ModuleSet,
    pub curve: &'static Curve,
    pub seed: u64,
    pub key_lifetime: Tick,
    pub detector: DetectorConfig,
    pub trust: TrustConfig,
    pub session_timeout: Tick,
    pub grant_lifetime: Tick,
    pub aggregators: usize,
    pub smc_modulus: u64,
    pub aggregate: AggregateMode,
    pub reading_period: Tick,
    /// Ticks a brokered service request may stay unanswered.
    pub service_timeout: Tick,
    pub device_template: PolicyTemplate,
    pub extra_policies: Vec<(Subject, AccessTree, Effect)>,
    pub roles: BTreeMap<NodeId, String>,
}

/// Template every device policy is derived from when none is configured.
pub const DEFAULT_DEVICE_POLICY: &str = "or(msg_type in [join, auth, reading], \
and(msg_type = service, op in [use, response]), \
and(msg_type = service, op in [read, write], target = $node), \
and(msg_type = control, role = operator))";

pub fn default_device_template() -> PolicyTemplate {
    PolicyTemplate {
        name: "device".into(),
        tree: crate::abac::parse_tree(DEFAULT_DEVICE_POLICY).expect("default policy parses"),
        effect: Effect::Permit,
    }
}

impl GatewayConfig {
    pub fn new(modules: ModuleSet, curve: &'static Curve, seed: u64) -> Self {
        GatewayConfig {
            modules,
            curve,
            seed,
            key_lifetime: crate::keymgmt::DEFAULT_KEY_LIFETIME,
            detector: DetectorConfig::default(),
            trust: TrustConfig::default(),
            session_timeout: crate::authn::DEFAULT_SESSION_TIMEOUT,
            grant_lifetime: crate::authn::DEFAULT_GRANT_LIFETIME,
            aggregators: crate::privacy::DEFAULT_AGGREGATORS,
            smc_modulus: crate::privacy::SMC_MODULUS,
            aggregate: AggregateMode::Sum,
            reading_period: 20,
            service_timeout: 10,
            device_template: default_device_template(),
            extra_policies: Vec::new(),
            roles: BTreeMap::new(),
        }
    }
}

/// A frame for the link gateway → `head`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub head: NodeId,
    pub frame: Vec<u8>,
}

#[derive(Clone, Copy, Debug)]
struct AuthPending {
    src: NodeId,
    claimed: NodeId,
    service: u32,
    expiry: Tick,
}

#[derive(Clone, Copy, Debug)]
struct ServicePending {
    server: NodeId,
    src: NodeId,
    deadline: Tick,
}

#[derive(Clone, Debug)]
enum RoundState {
    Shared(AggregatorSet),
    Plain { sum: u64, contributors: Vec<NodeId> },
}

#[derive(Clone, Debug)]
struct Round {
    state: RoundState,
    seen: BTreeSet<NodeId>,
}

const STORAGE_DEPTH: usize = 16;
const FIRST_RULE_PRIORITY: u16 = 1000;

pub struct Controller {
    cfg: GatewayConfig,
    topo: Topology,
    rng: ChaCha8Rng,
    keys: KeyManager,
    creds: CredentialStore,
    auth: Authenticator,
    policies: PolicyStore,
    trust: TrustStore,
    detector: Detector,
    dispatcher: Dispatcher,
    audit: AuditLog,
    registry: BTreeMap<NodeId, DeviceRecord>,
    flows: BTreeMap<FlowKey, FlowRecord>,
    manifest: BTreeMap<NodeId, Vec<u8>>,
    head_keys: BTreeMap<NodeId, [u8; 32]>,
    service_keys: BTreeMap<u32, [u8; 32]>,
    pending_auth: BTreeMap<u64, AuthPending>,
    grant_src: BTreeMap<(NodeId, u32), NodeId>,
    pending_service: BTreeMap<(NodeId, u32), ServicePending>,
    rounds: BTreeMap<u32, Round>,
    next_open_round: u32,
    sink: Vec<SinkRecord>,
    storage: BTreeMap<NodeId, Vec<Vec<u8>>>,
    installed: BTreeMap<NodeId, BTreeMap<FlowMatch, u16>>,
    next_priority: BTreeMap<NodeId, u16>,
    flagged_rules: BTreeSet<(NodeId, FlowMatch)>,
    trust_low: BTreeSet<NodeId>,
    alerts: Vec<Alert>,
    countermeasures: Vec<AppliedCountermeasure>,
    observations: Vec<Observation>,
}

impl Controller {
    /// `manifest` holds each device's provisioned bootstrap point encoding;
    /// `head_keys` the control-channel key shared with each head.
    pub fn new(
        cfg: GatewayConfig,
        topo: Topology,
        gateway_keys: KeyPair,
        manifest: BTreeMap<NodeId, Vec<u8>>,
        head_keys: BTreeMap<NodeId, [u8; 32]>,
    ) -> Result<Self, GatewayError> {
        let detector = Detector::new(cfg.detector)?;
        let mut vocab: Vec<String> = ["node", "cluster", "role", "epoch", "src", "dst", "msg_type", "op", "target", "trust_band"]
            .into_iter()
            .map(String::from)
            .collect();
        vocab.sort();
        let mut policies = PolicyStore::with_vocabulary(vocab);
        for (subject, tree, effect) in &cfg.extra_policies {
            policies.store(*subject, tree.clone(), *effect, 0)?;
        }
        let mut auth = Authenticator::new(
            derive_seed(cfg.seed, NodeId::GATEWAY, Stream::Behavior),
            cfg.session_timeout,
            cfg.grant_lifetime,
        );
        let secret = cfg.curve.encode_scalar(gateway_keys.secret().expose());
        let mut service_keys = BTreeMap::new();
        for s in [SERVICE_PEER, SERVICE_STORAGE] {
            let k = hmac_sha256(&secret, &[b"service", &s.to_be_bytes()]);
            auth.register_key(Principal::Service(s), k, 0);
            service_keys.insert(s, k);
        }
        let registry = topo
            .devices()
            .map(|d| {
                let rec = DeviceRecord {
                    node: d,
                    cluster: topo.cluster_of(d).expect("device has a cluster"),
                    head: topo.head_of(d).expect("device has a head"),
                    port: topo.port_of(d).expect("device has a port"),
                    role: cfg.roles.get(&d).cloned().unwrap_or_else(|| "sensor".into()),
                    status: DeviceStatus::Pending,
                    epoch: 0,
                    credential_ref: None,
                    policy_ref: None,
                    registered_at: None,
                };
                (d, rec)
            })
            .collect();
        Ok(Controller {
            keys: KeyManager::new(cfg.curve, gateway_keys, cfg.key_lifetime),
            rng: stream_rng(cfg.seed, NodeId::GATEWAY, Stream::Crypto),
            creds: CredentialStore::new(),
            auth,
            policies,
            trust: TrustStore::new(cfg.trust),
            detector,
            dispatcher: Dispatcher::new(),
            audit: AuditLog::new(),
            registry,
            flows: BTreeMap::new(),
            manifest,
            head_keys,
            service_keys,
            pending_auth: BTreeMap::new(),
            grant_src: BTreeMap::new(),
            pending_service: BTreeMap::new(),
            rounds: BTreeMap::new(),
            next_open_round: 0,
            sink: Vec::new(),
            storage: BTreeMap::new(),
            installed: BTreeMap::new(),
            next_priority: BTreeMap::new(),
            flagged_rules: BTreeSet::new(),
            trust_low: BTreeSet::new(),
            alerts: Vec::new(),
            countermeasures: Vec::new(),
            observations: Vec::new(),
            topo,
            cfg,
        })
    }

    /// Lets a revoked device join again with fresh keys.
    pub fn allow_rejoin(&mut self, node: NodeId) -> bool {
        match self.registry.get_mut(&node) {
            Some(r) if r.status == DeviceStatus::Revoked => {
                r.status = DeviceStatus::Pending;
                self.keys.allow_reregistration(node);
                true
            }
            _ => false,
        }
    }

    fn on(&self, m: Module) -> bool {
        self.cfg.modules.contains(m)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    /// For components outside the controller that log into the same trail.
    pub fn audit_mut(&mut self) -> &mut AuditLog {
        &mut self.audit
    }

    pub fn registry(&self) -> &BTreeMap<NodeId, DeviceRecord> {
        &self.registry
    }

    pub fn flows(&self) -> &BTreeMap<FlowKey, FlowRecord> {
        &self.flows
    }

    pub fn sink(&self) -> &[SinkRecord] {
        &self.sink
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn countermeasures(&self) -> &[AppliedCountermeasure] {
        &self.countermeasures
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn policies(&self) -> &PolicyStore {
        &self.policies
    }

    pub fn credentials(&self) -> &CredentialStore {
        &self.creds
    }

    pub fn key_manager(&self) -> &KeyManager {
        &self.keys
    }

    pub fn installed_rules(&self, head: NodeId) -> Vec<FlowMatch> {
        self.installed.get(&head).map(|m| m.keys().copied().collect()).unwrap_or_default()
    }

    pub fn stored(&self, node: NodeId) -> &[Vec<u8>] {
        self.storage.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn status(&self, node: NodeId) -> Option<DeviceStatus> {
        self.registry.get(&node).map(|r| r.status)
    }

    fn is_registered(&self, node: NodeId) -> bool {
        self.status(node) == Some(DeviceStatus::Registered)
    }

    /// Checks that every registered device holds exactly the artefacts its
    /// enabled modules hand out.
    pub fn check_registry(&self, now: Tick) -> Result<(), String> {
        for r in self.registry.values().filter(|r| r.status == DeviceStatus::Registered) {
            if self.on(Module::Privacy) {
                let live = self.creds.live(r.node).ok_or(format!("{} has no live credential", r.node))?;
                if Some(live.id) != r.credential_ref {
                    return Err(format!("{} credential ref is stale", r.node));
                }
            }
            if self.on(Module::AccessControl) {
                let p = self
                    .policies
                    .get(&Subject::Node(r.node))
                    .ok_or(format!("{} has no policy", r.node))?;
                if Some(p.id) != r.policy_ref {
                    return Err(format!("{} policy ref is stale", r.node));
                }
            }
            if self.on(Module::KeyMgmt) && self.keys.check(r.node, Some(r.epoch), now).is_err() {
                return Err(format!("{} keys not live at epoch {}", r.node, r.epoch));
            }
        }
        Ok(())
    }

    fn to_head(&self, head: NodeId, msg: &Message) -> Outbound {
        let key = if self.on(Module::AuthN) {
            self.head_keys.get(&head)
        } else {
            None
        };
        Outbound {
            head,
            frame: seal_control(key, msg),
        }
    }

    fn to_device(&self, node: NodeId, msg_type: MsgType, payload: Vec<u8>, out: &mut Vec<Outbound>) {
        let (Some(head), Some(port)) = (self.topo.head_of(node), self.topo.port_of(node)) else {
            return;
        };
        let pkt = Packet::new(NodeId::GATEWAY, node, msg_type, payload);
        let frame = crate::southbound::encode(&Message::Data(pkt)).expect("fits");
        out.push(self.to_head(head, &Message::PacketOut { out_port: port, frame }));
    }

    /// Entry point for every frame arriving from cluster head `from`.
    pub fn handle(&mut self, now: Tick, from: NodeId, bytes: &[u8]) -> Vec<Outbound> {
        let mut out = Vec::new();
        let msg = match crate::southbound::decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.audit.record(now, "gateway", "bad_frame", &[("from", &from), ("error", &e)]);
                return out;
            }
        };
        match msg {
            Message::PacketIn { in_port, frame } => {
                let origin = self.topo.device_at(from, in_port);
                match crate::southbound::decode(&frame) {
                    Ok(Message::JoinRequest { node, pubkey }) => {
                        self.on_join(now, node, &pubkey, origin, frame.len() as u64, &mut out)
                    }
                    Ok(Message::Data(pkt)) => self.on_data(now, pkt, origin, &mut out),
                    Ok(other) => self.audit.record(
                        now,
                        "gateway",
                        "unexpected",
                        &[("from", &from), ("kind", &other.kind_name())],
                    ),
                    Err(e) => self.audit.record(now, "gateway", "bad_frame", &[("from", &from), ("error", &e)]),
                }
            }
            Message::Data(pkt) => self.on_data(now, pkt, None, &mut out),
            Message::StatsReport { entries } => self.on_stats(now, from, &entries, &mut out),
            Message::Hello { .. } => {}
            other => self.audit.record(
                now,
                "gateway",
                "unexpected",
                &[("from", &from), ("kind", &other.kind_name())],
            ),
        }
        out
    }

    fn account(&mut self, now: Tick, key: FlowKey, bytes: u64, origin: Option<NodeId>, verdict: Verdict) {
        let rec = self.flows.entry(key).or_insert(FlowRecord {
            key,
            packets: 0,
            bytes: 0,
            first_seen: now,
            last_seen: now,
            verdicts: BTreeMap::new(),
        });
        rec.packets += 1;
        rec.bytes += bytes;
        rec.last_seen = now;
        *rec.verdicts.entry(verdict).or_default() += 1;
        self.observations.push(Observation::Packet {
            tick: now,
            key,
            origin,
            verdict,
        });
        if self.on(Module::Mitigation) {
            let ev = FlowEvent {
                tick: now,
                key,
                bytes,
                origin,
                spoofed: verdict == Verdict::Spoofed,
                integrity_failure: verdict.is_integrity_failure(),
                auth_failure: verdict == Verdict::AuthFailure,
                verdict: verdict.name().to_string(),
            };
            self.detector.ingest(&ev, &mut self.audit);
        } else {
            self.audit.record(
                now,
                "gateway",
                "flow",
                &[
                    ("src", &key.src),
                    ("dst", &key.dst),
                    ("type", &key.msg_type.name()),
                    ("bytes", &bytes),
                    ("verdict", &verdict),
                ],
            );
        }
    }

    fn on_data(&mut self, now: Tick, pkt: Packet, origin: Option<NodeId>, out: &mut Vec<Outbound>) {
        let key = FlowKey::of(&pkt);
        let bytes = pkt.wire_len();
        let verdict = self.classify(now, &pkt, origin, out);
        self.account(now, key, bytes, origin, verdict);
    }

    fn classify(&mut self, now: Tick, pkt: &Packet, origin: Option<NodeId>, out: &mut Vec<Outbound>) -> Verdict {
        if self.on(Module::Mitigation) && origin.is_some_and(|o| o != pkt.src) {
            return Verdict::Spoofed;
        }
        match self.status(pkt.src) {
            Some(DeviceStatus::Registered) => {}
            Some(DeviceStatus::Revoked) => return Verdict::Revoked,
            Some(DeviceStatus::Quarantined) => return Verdict::Quarantined,
            _ => return Verdict::Unregistered,
        }
        match pkt.msg_type {
            MsgType::Reading => self.on_reading(now, pkt),
            MsgType::Auth => self.on_auth(now, pkt, out),
            MsgType::Service => self.on_service(now, pkt, out),
            MsgType::Control => self.on_control(now, pkt),
            MsgType::Join => Verdict::Malformed,
        }
    }

    fn attributes(&self, node: NodeId) -> AttributeSet {
        let Some(r) = self.registry.get(&node) else {
            return AttributeSet::new();
        };
        let mut a = device_bindings(node, r.cluster, &r.role, r.epoch);
        let band = if self.trust_low.contains(&node) { "low" } else { "ok" };
        a.insert("trust_band".into(), AttrValue::Str(band.into()));
        a
    }

    fn permitted(&mut self, now: Tick, principal: NodeId, key: FlowKey, extra: &[(&str, AttrValue)]) -> bool {
        if !self.on(Module::AccessControl) {
            return true;
        }
        let mut attrs = self.attributes(principal);
        for (k, v) in extra {
            attrs.insert((*k).to_string(), v.clone());
        }
        let key = FlowKey { src: principal, ..key };
        match self.policies.authorize_flow(&key, &attrs) {
            AccessDecision::Permit(_) => true,
            AccessDecision::Deny(reason) => {
                self.audit.record(
                    now,
                    "abac",
                    "deny",
                    &[("flow", &key), ("reason", &reason.name())],
                );
                false
            }
        }
    }

    fn round_now(&self, now: Tick) -> u32 {
        (now / self.cfg.reading_period) as u32
    }

    fn on_reading(&mut self, now: Tick, pkt: &Packet) -> Verdict {
        let src = pkt.src;
        if !self.permitted(now, src, FlowKey::of(pkt), &[]) {
            return Verdict::Denied;
        }
        let curve = self.cfg.curve;
        enum Contribution {
            Shares(Vec<u64>),
            Plain(u64),
        }
        let (round, contribution) = if self.on(Module::Privacy) {
            let Ok(cp) = CipherPacket::decode(curve, &pkt.payload) else {
                return Verdict::IntegrityFailure;
            };
            if cp.node != src {
                return Verdict::IntegrityFailure;
            }
            match self.keys.check(src, None, now) {
                Ok(_) => {}
                Err(KeyError::Revoked(_)) => return Verdict::Revoked,
                Err(_) => return Verdict::IntegrityFailure,
            }
            let Some(rec) = self.creds.live(src) else {
                return Verdict::IntegrityFailure;
            };
            let Ok(pt) = open(curve, self.keys.gateway_keys(), &rec.device_pub, &cp) else {
                return Verdict::IntegrityFailure;
            };
            let Ok(sr) = SharedReading::decode(&pt, self.cfg.aggregators) else {
                return Verdict::IntegrityFailure;
            };
            (sr.round, Contribution::Shares(sr.shares))
        } else {
            let Ok(pr) = PlainReading::decode(&pkt.payload) else {
                return Verdict::IntegrityFailure;
            };
            (pr.round, Contribution::Plain(pr.value))
        };
        if round < self.next_open_round || round > self.round_now(now) + 1 {
            return Verdict::Stale;
        }
        let (m, q) = (self.cfg.aggregators, self.cfg.smc_modulus);
        let privacy = self.on(Module::Privacy);
        let r = self.rounds.entry(round).or_insert_with(|| Round {
            state: if privacy {
                RoundState::Shared(AggregatorSet::new(m, q))
            } else {
                RoundState::Plain {
                    sum: 0,
                    contributors: Vec::new(),
                }
            },
            seen: BTreeSet::new(),
        });
        if !r.seen.insert(src) {
            return Verdict::Duplicate;
        }
        match (&mut r.state, contribution) {
            (RoundState::Shared(agg), Contribution::Shares(shares)) => {
                if agg.accept(&SmcShareSet { owner: src, shares }).is_err() {
                    r.seen.remove(&src);
                    return Verdict::IntegrityFailure;
                }
            }
            (RoundState::Plain { sum, contributors }, Contribution::Plain(v)) => {
                *sum = sum.wrapping_add(v);
                contributors.push(src);
            }
            _ => unreachable!("round state follows the privacy module"),
        }
        let slot = self.storage.entry(src).or_default();
        slot.push(pkt.payload.clone());
        if slot.len() > STORAGE_DEPTH {
            slot.remove(0);
        }
        Verdict::Accepted
    }

    fn authorized(&self, principal: NodeId, service: u32, src: NodeId, now: Tick) -> bool {
        !self.on(Module::AuthN)
            || (self
                .auth
                .has_grant(Principal::Service(service), Principal::Node(principal), now)
                && self.grant_src.get(&(principal, service)) == Some(&src))
    }

    fn auth_reply(&self, to: NodeId, op: AuthOp, principal: Principal, session: u64, out: &mut Vec<Outbound>) {
        let f = AuthFrame {
            op,
            principal,
            session,
            nonce: [0; 16],
            proof: [0; 32],
        };
        self.to_device(to, MsgType::Auth, f.encode(), out);
    }

    fn on_auth(&mut self, now: Tick, pkt: &Packet, out: &mut Vec<Outbound>) -> Verdict {
        if !self.on(Module::AuthN) {
            return Verdict::Ignored;
        }
        if !self.permitted(now, pkt.src, FlowKey::of(pkt), &[]) {
            return Verdict::Denied;
        }
        let Some(f) = AuthFrame::decode(&pkt.payload) else {
            return Verdict::Malformed;
        };
        match f.op {
            AuthOp::Request => {
                let service = f.session as u32;
                let claimed = match f.principal {
                    Principal::Node(n) if self.service_keys.contains_key(&service) && f.session <= u32::MAX as u64 => n,
                    _ => {
                        self.auth_reply(pkt.src, AuthOp::Deny, f.principal, f.session, out);
                        return Verdict::AuthFailure;
                    }
                };
                let known = self.is_registered(claimed)
                    && self
                        .auth
                        .key_of(Principal::Node(claimed))
                        .is_some_and(|k| !k.revoked);
                let session = if known {
                    self.auth
                        .begin(Principal::Service(service), Principal::Node(claimed), now)
                        .ok()
                } else {
                    None
                };
                let Some(s) = session else {
                    self.audit.record(now, "authn", "unknown_principal", &[("claimed", &claimed), ("src", &pkt.src)]);
                    self.auth_reply(pkt.src, AuthOp::Deny, f.principal, f.session, out);
                    return Verdict::AuthFailure;
                };
                self.pending_auth.insert(
                    s.id,
                    AuthPending {
                        src: pkt.src,
                        claimed,
                        service,
                        expiry: s.expiry,
                    },
                );
                let ch = AuthFrame {
                    op: AuthOp::Challenge,
                    principal: Principal::Service(service),
                    session: s.id,
                    nonce: s.nonce_i,
                    proof: [0; 32],
                };
                self.to_device(pkt.src, MsgType::Auth, ch.encode(), out);
                Verdict::Accepted
            }
            AuthOp::Response => {
                let Some(p) = self.pending_auth.get(&f.session).copied() else {
                    self.auth_reply(pkt.src, AuthOp::Deny, f.principal, f.session, out);
                    return Verdict::AuthFailure;
                };
                if p.src != pkt.src || f.principal != Principal::Node(p.claimed) {
                    self.auth_reply(pkt.src, AuthOp::Deny, f.principal, f.session, out);
                    return Verdict::AuthFailure;
                }
                self.pending_auth.remove(&f.session);
                let step = self
                    .auth
                    .verify(f.session, Role::Responder, &f.proof, Some(f.nonce), now)
                    .and_then(|_| {
                        let sp = compute_proof(&self.service_keys[&p.service], &f.nonce, Principal::Service(p.service));
                        self.auth.verify(f.session, Role::Initiator, &sp, None, now).map(|st| (st, sp))
                    });
                match step {
                    Ok((SessionState::Mutual, sp)) => {
                        self.grant_src.insert((p.claimed, p.service), pkt.src);
                        let g = AuthFrame {
                            op: AuthOp::Grant,
                            principal: Principal::Service(p.service),
                            session: f.session,
                            nonce: f.nonce,
                            proof: sp,
                        };
                        self.to_device(pkt.src, MsgType::Auth, g.encode(), out);
                        self.audit.record(
                            now,
                            "authn",
                            "grant",
                            &[("principal", &p.claimed), ("service", &p.service), ("src", &pkt.src)],
                        );
                        self.observations.push(Observation::Granted {
                            tick: now,
                            src: pkt.src,
                            principal: p.claimed,
                            service: p.service,
                        });
                        Verdict::Accepted
                    }
                    other => {
                        let why = match other {
                            Err(e) => e.to_string(),
                            Ok((st, _)) => format!("{st:?}"),
                        };
                        self.audit.record(
                            now,
                            "authn",
                            "fail",
                            &[("principal", &p.claimed), ("src", &pkt.src), ("why", &why)],
                        );
                        self.auth_reply(pkt.src, AuthOp::Deny, f.principal, f.session, out);
                        Verdict::AuthFailure
                    }
                }
            }
            _ => Verdict::Malformed,
        }
    }

    fn service_result(&self, to: NodeId, req: &ServiceFrame, status: u8, body: Vec<u8>, out: &mut Vec<Outbound>) {
        let mut f = ServiceFrame::new(ServiceOp::Result, NodeId::GATEWAY, req.principal, req.request);
        f.status = status;
        f.body = body;
        self.to_device(to, MsgType::Service, f.encode(), out);
    }

    fn on_service(&mut self, now: Tick, pkt: &Packet, out: &mut Vec<Outbound>) -> Verdict {
        let Some(f) = ServiceFrame::decode(&pkt.payload) else {
            return Verdict::Malformed;
        };
        if f.op == ServiceOp::Result {
            return Verdict::Malformed;
        }
        let src = pkt.src;
        let principal = f.principal;
        if principal != src && !self.on(Module::AuthN) {
            // without authentication the claimed identity is taken at face value
            self.audit.record(now, "gateway", "acting_as", &[("src", &src), ("principal", &principal)]);
        }
        let extra = [
            ("op", AttrValue::Str(f.op.name().into())),
            ("target", AttrValue::Int(f.target.0 as i64)),
        ];
        if !self.permitted(now, principal, FlowKey::of(pkt), &extra) {
            self.service_result(src, &f, STATUS_DENIED, Vec::new(), out);
            return Verdict::Denied;
        }
        if matches!(f.op, ServiceOp::Use | ServiceOp::Read | ServiceOp::Write)
            && !self.authorized(principal, f.op.service(), src, now)
        {
            self.service_result(src, &f, STATUS_DENIED, Vec::new(), out);
            return Verdict::AuthRequired;
        }
        match f.op {
            ServiceOp::Use => {
                let server = f.target;
                if server == principal || !self.is_registered(server) {
                    self.service_result(src, &f, STATUS_FAILED, Vec::new(), out);
                    return Verdict::NoRoute;
                }
                if self.on(Module::Trust) {
                    let raters = self.topo.cluster_peers(server);
                    let a = self.trust.assess_request(
                        &[server],
                        |n| self.registry.get(&n).is_some_and(|r| r.status == DeviceStatus::Registered),
                        |_| raters.clone(),
                    );
                    if a.decision == Decision::Deny {
                        let reason = a.offenders().next().and_then(|n| n.reason.clone()).unwrap_or_default();
                        self.audit.record(
                            now,
                            "trust",
                            "deny",
                            &[("requester", &principal), ("server", &server), ("reason", &reason)],
                        );
                        self.trust_low.insert(server);
                        self.observations.push(Observation::TrustDenied {
                            tick: now,
                            requester: principal,
                            server,
                        });
                        self.service_result(src, &f, STATUS_DENIED, Vec::new(), out);
                        return Verdict::TrustDenied;
                    }
                    self.trust_low.remove(&server);
                }
                self.pending_service.insert(
                    (principal, f.request),
                    ServicePending {
                        server,
                        src,
                        deadline: now + self.cfg.service_timeout,
                    },
                );
                let fwd = ServiceFrame::new(ServiceOp::Use, principal, server, f.request);
                self.to_device(server, MsgType::Service, fwd.encode(), out);
                self.observations.push(Observation::Forwarded {
                    tick: now,
                    requester: principal,
                    server,
                });
                Verdict::Accepted
            }
            ServiceOp::Response => {
                let k = (f.target, f.request);
                match self.pending_service.get(&k).copied() {
                    Some(p) if p.server == src => {
                        self.pending_service.remove(&k);
                        let cooperated = f.status == STATUS_OK;
                        self.encounter(now, f.target, src, cooperated);
                        let req = ServiceFrame::new(ServiceOp::Use, f.target, src, f.request);
                        let status = if cooperated { STATUS_OK } else { STATUS_FAILED };
                        self.service_result(p.src, &req, status, f.body.clone(), out);
                        Verdict::Accepted
                    }
                    _ => Verdict::NoRoute,
                }
            }
            ServiceOp::Read => {
                if !self.registry.contains_key(&f.target) {
                    self.service_result(src, &f, STATUS_FAILED, Vec::new(), out);
                    return Verdict::NoRoute;
                }
                let entries = self.stored(f.target).to_vec();
                let mut body = Vec::new();
                for e in &entries {
                    body.extend_from_slice(&(e.len() as u16).to_be_bytes());
                    body.extend_from_slice(e);
                }
                self.observations.push(Observation::StorageRead {
                    tick: now,
                    src,
                    principal,
                    target: f.target,
                    entries: entries.len(),
                });
                self.service_result(src, &f, STATUS_OK, body, out);
                Verdict::Accepted
            }
            ServiceOp::Write => {
                if !self.registry.contains_key(&f.target) {
                    self.service_result(src, &f, STATUS_FAILED, Vec::new(), out);
                    return Verdict::NoRoute;
                }
                self.storage.insert(f.target, vec![f.body.clone()]);
                self.observations.push(Observation::StorageWrite {
                    tick: now,
                    src,
                    principal,
                    target: f.target,
                });
                self.service_result(src, &f, STATUS_OK, Vec::new(), out);
                Verdict::Accepted
            }
            ServiceOp::Result => Verdict::Malformed,
        }
    }

    fn encounter(&mut self, now: Tick, requester: NodeId, server: NodeId, cooperated: bool) {
        if self.on(Module::Trust) {
            let e = self.trust.record(requester, server, cooperated, now);
            self.audit.record(
                now,
                "trust",
                "encounter",
                &[("a", &requester), ("b", &server), ("n", &e.index), ("coop", &cooperated)],
            );
        }
    }

    fn on_control(&mut self, now: Tick, pkt: &Packet) -> Verdict {
        let Some(c) = ControlFrame::decode(&pkt.payload) else {
            return Verdict::Malformed;
        };
        if !self.permitted(now, pkt.src, FlowKey::of(pkt), &[("op", AttrValue::Str("control".into()))]) {
            return Verdict::Denied;
        }
        self.audit.record(now, "gateway", "control", &[("src", &pkt.src), ("command", &c.command)]);
        self.observations.push(Observation::ControlExecuted {
            tick: now,
            src: pkt.src,
            command: c.command,
        });
        Verdict::Accepted
    }

    fn on_join(
        &mut self,
        now: Tick,
        node: NodeId,
        pubkey: &[u8],
        origin: Option<NodeId>,
        bytes: u64,
        out: &mut Vec<Outbound>,
    ) {
        let key = FlowKey {
            src: node,
            dst: NodeId::GATEWAY,
            msg_type: MsgType::Join,
        };
        let verdict = self.join_verdict(now, node, pubkey, origin, out);
        self.account(now, key, bytes, origin, verdict);
    }

    fn join_verdict(
        &mut self,
        now: Tick,
        node: NodeId,
        pubkey: &[u8],
        origin: Option<NodeId>,
        out: &mut Vec<Outbound>,
    ) -> Verdict {
        if self.on(Module::Mitigation) && origin.is_some_and(|o| o != node) {
            return Verdict::Spoofed;
        }
        let reject = |this: &Self, out: &mut Vec<Outbound>| {
            this.to_device(node, MsgType::Join, JoinReply::rejected().encode(), out);
        };
        match self.status(node) {
            None => return Verdict::Unregistered,
            Some(DeviceStatus::Registered) => {
                reject(self, out);
                return Verdict::Duplicate;
            }
            Some(DeviceStatus::Revoked | DeviceStatus::Quarantined) => {
                reject(self, out);
                return Verdict::Revoked;
            }
            Some(DeviceStatus::Pending) => {}
        }
        let bootstrap = if self.on(Module::KeyMgmt) {
            let Ok(p) = self.cfg.curve.decode_point(pubkey) else {
                reject(self, out);
                return Verdict::Malformed;
            };
            if self.on(Module::AuthN) && self.manifest.get(&node).map(Vec::as_slice) != Some(pubkey) {
                self.audit.record(now, "authn", "join_refused", &[("node", &node), ("why", &"bootstrap key not provisioned")]);
                reject(self, out);
                return Verdict::AuthFailure;
            }
            Some(p)
        } else {
            None
        };
        match self.register_device(now, node, bootstrap) {
            Ok(reply) => {
                self.to_device(node, MsgType::Join, reply.encode(), out);
                Verdict::Accepted
            }
            Err(e) => {
                self.audit.record(now, "gateway", "register_failed", &[("node", &node), ("error", &e)]);
                reject(self, out);
                Verdict::Denied
            }
        }
    }

    /// Issues keys, credential, service key and policy for `node` as the
    /// enabled modules require, and marks it registered.
    pub fn register_device(
        &mut self,
        now: Tick,
        node: NodeId,
        bootstrap: Option<CurvePoint>,
    ) -> Result<JoinReply, GatewayError> {
        let (epoch, credential, bundle, valid_from) = self.issue_keys(now, node, bootstrap.as_ref())?;
        let rec = self.registry.get(&node).cloned().ok_or(KeyError::Unknown(node))?;
        let mut policy_ref = None;
        if self.on(Module::AccessControl) {
            let b = device_bindings(node, rec.cluster, &rec.role, epoch);
            let template = self.cfg.device_template.clone();
            policy_ref = Some(self.policies.derive_policy(node, &b, &template, now)?.id);
        }
        let r = self.registry.get_mut(&node).expect("checked");
        r.status = DeviceStatus::Registered;
        r.epoch = epoch;
        r.credential_ref = credential;
        r.policy_ref = policy_ref;
        r.registered_at = Some(now);
        let cred_s = credential.map_or("-".to_string(), |c| c.to_string());
        let pol_s = policy_ref.map_or("-".to_string(), |c| c.to_string());
        self.audit.record(
            now,
            "gateway",
            "register",
            &[("node", &node), ("epoch", &epoch), ("credential", &cred_s), ("policy", &pol_s)],
        );
        self.observations.push(Observation::Registered { tick: now, node });
        Ok(JoinReply {
            status: JoinStatus::Accepted,
            credential: credential.unwrap_or(0),
            valid_from,
            bundle,
        })
    }

    /// Key pair, sealed bundle, credential and service key for `node`.
    /// `seal_to` is the point the bundle is encrypted for.
    fn issue_keys(
        &mut self,
        now: Tick,
        node: NodeId,
        seal_to: Option<&CurvePoint>,
    ) -> Result<(u32, Option<u64>, Vec<u8>, Tick), GatewayError> {
        if !self.on(Module::KeyMgmt) {
            return Ok((0, None, Vec::new(), now));
        }
        let seal_to = seal_to.ok_or(GatewayError::NoBootstrap(node))?;
        let curve = self.cfg.curve;
        let (entry, kp) = self.keys.generate_keypair_for(node, now, &mut self.rng)?;
        let bundle = seal_bundle(
            curve,
            self.keys.gateway_keys(),
            seal_to,
            &KeyBundle {
                keys: kp.clone(),
                epoch: entry.epoch,
                valid_to: entry.valid_to,
            },
        )?;
        let mut credential = None;
        if self.on(Module::Privacy) {
            self.creds.retire(node);
            let gw = *self.keys.gateway_public();
            let c = self
                .creds
                .issue(node, kp, gw, self.cfg.smc_modulus, now, entry.valid_to)?;
            credential = Some(c.id);
            self.audit.record(now, "privacy", "credential", &[("node", &node), ("id", &c.id)]);
        }
        if self.on(Module::AuthN) {
            let k = self.keys.gateway_pairwise(node)?;
            self.auth.register_key(Principal::Node(node), k.0, now);
        }
        self.audit.record(
            now,
            "keymgmt",
            "issue",
            &[("node", &node), ("epoch", &entry.epoch), ("valid_to", &entry.valid_to)],
        );
        Ok((entry.epoch, credential, bundle, now))
    }

    fn renew(&mut self, now: Tick, node: NodeId, out: &mut Vec<Outbound>) -> Result<(), GatewayError> {
        let old = self.keys.entry(node).ok_or(KeyError::Unknown(node))?.public;
        let (epoch, credential, bundle, valid_from) = self.issue_keys(now, node, Some(&old))?;
        let rec = self.registry.get(&node).cloned().ok_or(KeyError::Unknown(node))?;
        let mut policy_ref = rec.policy_ref;
        if self.on(Module::AccessControl) {
            let b = device_bindings(node, rec.cluster, &rec.role, epoch);
            let template = self.cfg.device_template.clone();
            policy_ref = Some(self.policies.derive_policy(node, &b, &template, now)?.id);
        }
        let r = self.registry.get_mut(&node).expect("checked");
        r.epoch = epoch;
        r.credential_ref = credential;
        r.policy_ref = policy_ref;
        self.audit.record(now, "keymgmt", "renew", &[("node", &node), ("epoch", &epoch)]);
        let reply = JoinReply {
            status: JoinStatus::Renewed,
            credential: credential.unwrap_or(0),
            valid_from,
            bundle,
        };
        self.to_device(node, MsgType::Join, reply.encode(), out);
        Ok(())
    }

    fn on_stats(&mut self, now: Tick, head: NodeId, entries: &[StatsEntry], out: &mut Vec<Outbound>) {
        if !self.on(Module::Mitigation) {
            return;
        }
        let known = self.installed.get(&head).cloned().unwrap_or_default();
        let mut alerts = Vec::new();
        for e in entries {
            if !known.contains_key(&e.matcher) && self.flagged_rules.insert((head, e.matcher)) {
                alerts.push(self.detector.rogue_rule(head, e.matcher, e.packets, now));
            }
        }
        self.raise(now, alerts, out);
    }

    fn raise(&mut self, now: Tick, alerts: Vec<Alert>, out: &mut Vec<Outbound>) {
        if alerts.is_empty() {
            return;
        }
        for a in &alerts {
            let origin = a.origin.map_or("-".to_string(), |o| o.to_string());
            self.audit.record(
                now,
                "mitigation",
                "alert",
                &[
                    ("id", &a.id),
                    ("kind", &a.kind.name()),
                    ("subject", &a.subject),
                    ("observed", &a.evidence.observed),
                    ("threshold", &format!("{:.2}", a.evidence.threshold)),
                    ("origin", &origin),
                ],
            );
        }
        let cms = self.dispatcher.countermeasures(&alerts);
        self.alerts.extend(alerts);
        for cm in cms {
            self.apply(now, &cm, out);
            self.audit.record(
                now,
                "mitigation",
                "countermeasure",
                &[("id", &cm.id), ("cause", &cm.cause), ("action", &cm.action)],
            );
            self.countermeasures.push(AppliedCountermeasure { tick: now, cm });
        }
    }

    fn install_rule(&mut self, head: NodeId, matcher: FlowMatch, action: Action, out: &mut Vec<Outbound>) {
        let table = self.installed.entry(head).or_default();
        if table.contains_key(&matcher) {
            return;
        }
        let prio = self.next_priority.entry(head).or_insert(FIRST_RULE_PRIORITY);
        let p = *prio;
        *prio += 1;
        table.insert(matcher, p);
        out.push(self.to_head(head, &Message::FlowMod(FlowMod::add(p, matcher, action))));
    }

    fn apply(&mut self, now: Tick, cm: &Countermeasure, out: &mut Vec<Outbound>) {
        match &cm.action {
            CmAction::InstallDropRule { matcher, origin } => {
                let at = origin.or(matcher.src).and_then(|n| self.topo.head_of(n));
                if let Some(head) = at {
                    self.install_rule(head, *matcher, Action::Drop, out);
                }
            }
            CmAction::PurgeRule { head, matcher } => {
                out.push(self.to_head(*head, &Message::FlowMod(FlowMod::delete(*matcher))));
            }
            CmAction::RevokeKeys(nodes) => self.revoke_nodes(now, nodes, "countermeasure", out),
            CmAction::Quarantine(n) => {
                if let Some(r) = self.registry.get_mut(n) {
                    r.status = DeviceStatus::Quarantined;
                }
                self.auth.revoke(Principal::Node(*n));
                if let Some(head) = self.topo.head_of(*n) {
                    self.install_rule(head, FlowMatch::from_src(*n), Action::Drop, out);
                }
            }
        }
    }

    /// Revokes every listed device and tells every head to cut it off.
    pub fn revoke_nodes(&mut self, now: Tick, nodes: &[NodeId], reason: &str, out: &mut Vec<Outbound>) {
        let targets: Vec<NodeId> = nodes.iter().copied().filter(|n| self.registry.contains_key(n)).collect();
        if targets.is_empty() {
            return;
        }
        let mut keyed = Vec::new();
        for n in &targets {
            let r = self.registry.get_mut(n).expect("filtered");
            if r.status == DeviceStatus::Registered {
                keyed.push(*n);
            }
            r.status = DeviceStatus::Revoked;
            self.creds.retire(*n);
            self.auth.revoke(Principal::Node(*n));
            self.policies.remove(&Subject::Node(*n));
        }
        let mut msg = Message::Revoke { nodes: targets.clone() };
        if self.on(Module::KeyMgmt) && !keyed.is_empty() {
            if let Ok(receipt) = self.keys.revoke(&keyed, reason, now) {
                if let Some(m) = receipt.message {
                    msg = m;
                    if let Message::Revoke { nodes } = &mut msg {
                        for n in &targets {
                            if !nodes.contains(n) {
                                nodes.push(*n);
                            }
                        }
                    }
                }
            }
        }
        let list: Vec<String> = targets.iter().map(|n| n.to_string()).collect();
        self.audit.record(now, "keymgmt", "revoke", &[("nodes", &list.join(",")), ("reason", &reason)]);
        let heads: Vec<NodeId> = self.topo.heads().collect();
        for h in heads {
            out.push(self.to_head(h, &msg));
        }
    }

    /// Closes the detector windows that end at or before `now`.
    pub fn on_window(&mut self, now: Tick) -> Vec<Outbound> {
        let mut out = Vec::new();
        if self.on(Module::Mitigation) {
            let alerts = self.detector.advance(now);
            self.raise(now, alerts, &mut out);
        }
        out
    }

    /// Periodic housekeeping at reading-period boundaries: closes the
    /// round two periods back, times out brokered requests, expires
    /// sessions and renews keys nearing the end of their lifetime.
    pub fn on_period(&mut self, now: Tick) -> Vec<Outbound> {
        let mut out = Vec::new();
        let current = self.round_now(now);
        while current >= 2 && self.next_open_round <= current - 2 {
            let r = self.next_open_round;
            self.close_round(now, r);
            self.next_open_round += 1;
        }
        let overdue: Vec<((NodeId, u32), ServicePending)> = self
            .pending_service
            .iter()
            .filter(|(_, p)| p.deadline <= now)
            .map(|(k, p)| (*k, *p))
            .collect();
        for ((requester, request), p) in overdue {
            self.pending_service.remove(&(requester, request));
            self.encounter(now, requester, p.server, false);
            let req = ServiceFrame::new(ServiceOp::Use, requester, p.server, request);
            self.service_result(p.src, &req, STATUS_FAILED, Vec::new(), &mut out);
        }
        self.auth.expire(now);
        self.pending_auth.retain(|_, p| p.expiry >= now);
        if self.on(Module::KeyMgmt) {
            let due: Vec<NodeId> = self
                .registry
                .values()
                .filter(|r| r.status == DeviceStatus::Registered && self.keys.needs_renewal(r.node, now))
                .map(|r| r.node)
                .collect();
            for n in due {
                if let Err(e) = self.renew(now, n, &mut out) {
                    self.audit.record(now, "keymgmt", "renew_failed", &[("node", &n), ("error", &e)]);
                }
            }
        }
        out
    }

    fn close_round(&mut self, now: Tick, round: u32) {
        let Some(r) = self.rounds.remove(&round) else {
            return;
        };
        let (result, contributors) = match r.state {
            RoundState::Shared(agg) => (
                agg.combine(self.cfg.aggregate).map_err(|e| e.to_string()),
                agg.contributors().to_vec(),
            ),
            RoundState::Plain { sum, contributors } => (
                Ok(AggregateResult {
                    mode: self.cfg.aggregate,
                    sum,
                    count: contributors.len() as u64,
                }),
                contributors,
            ),
        };
        match &result {
            Ok(a) => self.audit.record(
                now,
                "sink",
                "aggregate",
                &[
                    ("round", &round),
                    ("mode", &a.mode.name()),
                    ("value", &a.value()),
                    ("count", &a.count),
                ],
            ),
            Err(e) => self.audit.record(now, "sink", "incident", &[("round", &round), ("error", e)]),
        }
        self.sink.push(SinkRecord {
            round,
            closed_at: now,
            result,
            contributors,
        });
    }
}
