//! Scenario files: line-oriented `key = value` pairs under `[section]`
//! headers. `#` or `;` start a comment line.
//!
//! ```text
//! [scenario]   name, duration, seed
//! [topology]   clusters, devices_per_cluster, link_loss_rate
//! [modules]    enabled = privacy, keymgmt, ...
//! [traffic]    reading_period, max_reading, service_period, honest_cooperation,
//!              aggregate, aggregators
//! [trust]      alpha, initial, threshold, min_history
//! [detector]   window, dos_rate_multiplier, scan_fanout_limit, auth_failure_limit,
//!              integrity_failure_limit, baseline_learning_windows
//! [crypto]     curve
//! [keys]       lifetime
//! [authn]      session_timeout, grant_lifetime
//! [roles]      operators = <node>, ...
//! [attacks.N]  kind, attackers, victim, start, end, rate, cooperation
//! [policy.N]   applies_to = devices | node:<id> | flow:<src>><dst>:<type>, effect, tree
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::abac::{parse_tree, AccessTree, Effect};
use crate::authn::{DEFAULT_GRANT_LIFETIME, DEFAULT_SESSION_TIMEOUT};
use crate::ecc::CurveProfile;
use crate::gateway::{Module, ModuleSet};
use crate::keymgmt::DEFAULT_KEY_LIFETIME;
use crate::mitigation::DetectorConfig;
use crate::privacy::{AggregateMode, DEFAULT_AGGREGATORS, SMC_MODULUS};
use crate::simnet::{NodeId, Tick, Topology, TopologySpec};
use crate::southbound::{FlowMatch, MsgType};
use crate::trust::TrustConfig;

use super::ScenarioError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    /// Taps the victim's device link.
    EavesdropDevice,
    /// Taps the victim's cluster uplink.
    EavesdropUplink,
    /// Flips bits in the victim's readings on its device link.
    Corrupt,
    /// Overwrites the tail of the victim's readings on its device link.
    Modify,
    /// Attacker sends readings claiming the victim's id.
    Spoof,
    /// Attacker sends malformed readings under its own id.
    Inject,
    /// Attacker floods the gateway with readings.
    Dos,
    /// Several attackers flood the gateway at once.
    Ddos,
    /// Attacker probes a range of destinations.
    Scan,
    /// Attacker issues control commands without the operator role.
    UnauthorizedControl,
    /// Attacker reads the victim's stored readings.
    StorageRead,
    /// Attacker overwrites the victim's stored readings.
    StorageTamper,
    /// Attacker serves peer requests but mostly fails them.
    BadService,
    /// Attacker claims the victim's identity towards the storage service.
    Impostor,
    /// Attacker registers the victim before the victim joins.
    RogueJoin,
    /// Forged flow entry diverting the victim's readings to the attacker.
    RouteHijack,
}

impl AttackKind {
    pub const ALL: [AttackKind; 16] = [
        AttackKind::EavesdropDevice,
        AttackKind::EavesdropUplink,
        AttackKind::Corrupt,
        AttackKind::Modify,
        AttackKind::Spoof,
        AttackKind::Inject,
        AttackKind::Dos,
        AttackKind::Ddos,
        AttackKind::Scan,
        AttackKind::UnauthorizedControl,
        AttackKind::StorageRead,
        AttackKind::StorageTamper,
        AttackKind::BadService,
        AttackKind::Impostor,
        AttackKind::RogueJoin,
        AttackKind::RouteHijack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::EavesdropDevice => "eavesdrop_device",
            AttackKind::EavesdropUplink => "eavesdrop_uplink",
            AttackKind::Corrupt => "corrupt",
            AttackKind::Modify => "modify",
            AttackKind::Spoof => "spoof",
            AttackKind::Inject => "inject",
            AttackKind::Dos => "dos",
            AttackKind::Ddos => "ddos",
            AttackKind::Scan => "scan",
            AttackKind::UnauthorizedControl => "unauthorized_control",
            AttackKind::StorageRead => "storage_read",
            AttackKind::StorageTamper => "storage_tamper",
            AttackKind::BadService => "bad_service",
            AttackKind::Impostor => "impostor",
            AttackKind::RogueJoin => "rogue_join",
            AttackKind::RouteHijack => "route_hijack",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        AttackKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether the attack targets a specific victim device.
    pub fn needs_victim(self) -> bool {
        !matches!(
            self,
            AttackKind::Inject | AttackKind::Dos | AttackKind::Ddos | AttackKind::Scan | AttackKind::UnauthorizedControl | AttackKind::BadService
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub attackers: Vec<NodeId>,
    pub victim: Option<NodeId>,
    pub start: Tick,
    pub end: Tick,
    /// Frames per tick for floods; ticks between attempts otherwise.
    pub rate: u32,
    /// Probability a malicious server honours a request.
    pub cooperation: f64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, attacker: NodeId, victim: Option<NodeId>, start: Tick, end: Tick) -> Self {
        AttackSpec {
            kind,
            attackers: vec![attacker],
            victim,
            start,
            end,
            rate: 5,
            cooperation: 0.2,
        }
    }

    pub fn attacker(&self) -> NodeId {
        self.attackers[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyTarget {
    /// Replaces the template every device policy is derived from.
    Devices,
    Node(NodeId),
    Flow(FlowMatch),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySpec {
    pub applies_to: PolicyTarget,
    pub effect: Effect,
    pub tree: AccessTree,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficSpec {
    pub reading_period: Tick,
    pub max_reading: u64,
    /// Ticks between a device's peer-service requests; 0 disables them.
    pub service_period: Tick,
    pub honest_cooperation: f64,
    pub aggregate: AggregateMode,
    pub aggregators: usize,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            reading_period: 20,
            max_reading: 1000,
            service_period: 0,
            honest_cooperation: 0.95,
            aggregate: AggregateMode::Sum,
            aggregators: DEFAULT_AGGREGATORS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration: Tick,
    pub seed: u64,
    pub topology: TopologySpec,
    pub modules: ModuleSet,
    pub traffic: TrafficSpec,
    pub trust: TrustConfig,
    pub detector: DetectorConfig,
    pub curve: CurveProfile,
    pub key_lifetime: Tick,
    pub session_timeout: Tick,
    pub grant_lifetime: Tick,
    pub operators: Vec<NodeId>,
    pub attacks: Vec<AttackSpec>,
    pub policies: Vec<PolicySpec>,
}

/// Reputation prior for devices in scenarios. Registered devices start
/// above the threshold so that an honest newcomer is not locked out before
/// it has a history.
pub const SCENARIO_TRUST_PRIOR: f64 = 0.8;

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            name: "unnamed".into(),
            duration: 1000,
            seed: 1,
            topology: TopologySpec::default(),
            modules: ModuleSet::all(),
            traffic: TrafficSpec::default(),
            trust: TrustConfig {
                initial: SCENARIO_TRUST_PRIOR,
                ..TrustConfig::default()
            },
            detector: DetectorConfig::default(),
            curve: CurveProfile::P192,
            key_lifetime: DEFAULT_KEY_LIFETIME,
            session_timeout: DEFAULT_SESSION_TIMEOUT,
            grant_lifetime: DEFAULT_GRANT_LIFETIME,
            operators: Vec::new(),
            attacks: Vec::new(),
            policies: Vec::new(),
        }
    }
}

impl ScenarioSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.topology.seed = seed;
        self
    }

    pub fn with_modules(mut self, modules: ModuleSet) -> Self {
        self.modules = modules;
        self
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |field: &str, msg: String| Err(ScenarioError::Invalid { field: field.into(), msg });
        if self.name.is_empty() || self.name.contains(['\n', '#', ';']) {
            return bad("scenario.name", "must be non-empty without '#', ';' or newlines".into());
        }
        if self.duration == 0 {
            return bad("scenario.duration", "must be positive".into());
        }
        if let Err(e) = self.topology.validate() {
            return bad("topology", e.to_string());
        }
        if let Some((m, r)) = self.modules.missing_dependency() {
            return bad("modules.enabled", format!("{} requires {}", m.name(), r.name()));
        }
        let t = &self.traffic;
        if t.reading_period < 2 {
            return bad("traffic.reading_period", "must be at least 2".into());
        }
        if t.max_reading == 0 {
            return bad("traffic.max_reading", "must be positive".into());
        }
        let devices = self.topology.clusters as u128 * self.topology.devices_per_cluster as u128;
        if t.max_reading as u128 * devices >= SMC_MODULUS as u128 {
            return bad("traffic.max_reading", "max_reading times device count must stay below the share modulus".into());
        }
        if !(0.0..=1.0).contains(&t.honest_cooperation) {
            return bad("traffic.honest_cooperation", "must lie in [0, 1]".into());
        }
        if t.aggregators < 2 {
            return bad("traffic.aggregators", "need at least two".into());
        }
        let tr = &self.trust;
        if !(tr.alpha > 0.0 && tr.alpha <= 1.0) {
            return bad("trust.alpha", "must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&tr.initial) {
            return bad("trust.initial", "must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&tr.threshold) {
            return bad("trust.threshold", "must lie in [0, 1]".into());
        }
        if let Err(e) = self.detector.validate() {
            return bad("detector", e.to_string());
        }
        if self.key_lifetime == 0 {
            return bad("keys.lifetime", "must be positive".into());
        }
        if self.session_timeout == 0 || self.grant_lifetime == 0 {
            return bad("authn", "timeouts must be positive".into());
        }
        let topo = Topology::build(&self.topology).map_err(|e| ScenarioError::Invalid {
            field: "topology".into(),
            msg: e.to_string(),
        })?;
        for n in &self.operators {
            if !topo.is_device(*n) {
                return bad("roles.operators", format!("{n} is not a device"));
            }
        }
        for (i, a) in self.attacks.iter().enumerate() {
            let f = |k: &str| format!("attacks.{i}.{k}");
            if a.attackers.is_empty() {
                return bad(&f("attackers"), "at least one attacker".into());
            }
            if a.kind == AttackKind::Ddos && a.attackers.len() < 2 {
                return bad(&f("attackers"), "ddos needs at least two attackers".into());
            }
            for n in &a.attackers {
                if !topo.is_device(*n) {
                    return bad(&f("attackers"), format!("{n} is not a device"));
                }
            }
            match (a.kind.needs_victim(), a.victim) {
                (true, None) => return bad(&f("victim"), format!("{} needs a victim", a.kind.name())),
                (_, Some(v)) if !topo.is_device(v) => return bad(&f("victim"), format!("{v} is not a device")),
                (_, Some(v)) if a.attackers.contains(&v) => {
                    return bad(&f("victim"), "victim cannot be an attacker".into())
                }
                _ => {}
            }
            if a.start >= a.end || a.end > self.duration {
                return bad(&f("end"), "need start < end <= duration".into());
            }
            if a.rate == 0 {
                return bad(&f("rate"), "must be positive".into());
            }
            if !(0.0..=1.0).contains(&a.cooperation) {
                return bad(&f("cooperation"), "must lie in [0, 1]".into());
            }
        }
        for (i, p) in self.policies.iter().enumerate() {
            if let PolicyTarget::Node(n) = p.applies_to {
                if !topo.is_device(n) {
                    return bad(&format!("policy.{i}.applies_to"), format!("{n} is not a device"));
                }
            }
            if p.applies_to == PolicyTarget::Devices && p.effect != Effect::Permit {
                return bad(&format!("policy.{i}.effect"), "device templates must permit".into());
            }
        }
        if self.policies.iter().filter(|p| p.applies_to == PolicyTarget::Devices).count() > 1 {
            return bad("policy", "at most one device template".into());
        }
        Ok(())
    }

    /// Canonical text form; `parse(render(s)) == s` for every valid spec.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let list = |v: &[NodeId]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[scenario]\nname = {}\nduration = {}\nseed = {}", self.name, self.duration, self.seed);
        let t = &self.topology;
        let _ = writeln!(
            s,
            "\n[topology]\nclusters = {}\ndevices_per_cluster = {}\nlink_loss_rate = {}",
            t.clusters, t.devices_per_cluster, t.link_loss_rate
        );
        let mods: Vec<&str> = self.modules.iter().map(Module::name).collect();
        let _ = writeln!(s, "\n[modules]\nenabled = {}", mods.join(", "));
        let t = &self.traffic;
        let _ = writeln!(
            s,
            "\n[traffic]\nreading_period = {}\nmax_reading = {}\nservice_period = {}\nhonest_cooperation = {}\naggregate = {}\naggregators = {}",
            t.reading_period,
            t.max_reading,
            t.service_period,
            t.honest_cooperation,
            t.aggregate.name(),
            t.aggregators
        );
        let t = &self.trust;
        let _ = writeln!(
            s,
            "\n[trust]\nalpha = {}\ninitial = {}\nthreshold = {}\nmin_history = {}",
            t.alpha, t.initial, t.threshold, t.min_history
        );
        let d = &self.detector;
        let _ = writeln!(
            s,
            "\n[detector]\nwindow = {}\ndos_rate_multiplier = {}\nscan_fanout_limit = {}\nauth_failure_limit = {}\nintegrity_failure_limit = {}\nbaseline_learning_windows = {}",
            d.window,
            d.dos_rate_multiplier,
            d.scan_fanout_limit,
            d.auth_failure_limit,
            d.integrity_failure_limit,
            d.baseline_learning_windows
        );
        let _ = writeln!(s, "\n[crypto]\ncurve = {}", self.curve.name());
        let _ = writeln!(s, "\n[keys]\nlifetime = {}", self.key_lifetime);
        let _ = writeln!(
            s,
            "\n[authn]\nsession_timeout = {}\ngrant_lifetime = {}",
            self.session_timeout, self.grant_lifetime
        );
        let _ = writeln!(s, "\n[roles]\noperators = {}", list(&self.operators));
        for (i, a) in self.attacks.iter().enumerate() {
            let _ = writeln!(
                s,
                "\n[attacks.{i}]\nkind = {}\nattackers = {}",
                a.kind.name(),
                list(&a.attackers)
            );
            if let Some(v) = a.victim {
                let _ = writeln!(s, "victim = {v}");
            }
            let _ = writeln!(
                s,
                "start = {}\nend = {}\nrate = {}\ncooperation = {}",
                a.start, a.end, a.rate, a.cooperation
            );
        }
        for (i, p) in self.policies.iter().enumerate() {
            let target = match p.applies_to {
                PolicyTarget::Devices => "devices".to_string(),
                PolicyTarget::Node(n) => format!("node:{n}"),
                PolicyTarget::Flow(m) => format!("flow:{m}"),
            };
            let _ = writeln!(
                s,
                "\n[policy.{i}]\napplies_to = {target}\neffect = {}\ntree = {}",
                p.effect.name(),
                p.tree
            );
        }
        s
    }
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn field(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, into: &mut T) -> Result<(), ScenarioError> {
        if let Some((v, line)) = self.raw(key) {
            *into = v.parse().map_err(|_| ScenarioError::Parse {
                line,
                field: self.field(key),
                msg: format!("cannot read '{v}'"),
            })?;
        }
        Ok(())
    }

    fn with<T>(&mut self, key: &str, into: &mut T, f: impl Fn(&str) -> Option<T>) -> Result<(), ScenarioError> {
        if let Some((v, line)) = self.raw(key) {
            *into = f(&v).ok_or_else(|| ScenarioError::Parse {
                line,
                field: self.field(key),
                msg: format!("unknown value '{v}'"),
            })?;
        }
        Ok(())
    }

    fn nodes(&mut self, key: &str, into: &mut Vec<NodeId>) -> Result<(), ScenarioError> {
        let field = self.field(key);
        self.with(key, into, |v| parse_nodes(v))
            .map_err(|e| match e {
                ScenarioError::Parse { line, .. } => ScenarioError::Parse {
                    line,
                    field,
                    msg: "expected a comma-separated list of node ids".into(),
                },
                e => e,
            })
    }

    fn finish(self) -> Result<(), ScenarioError> {
        match self.entries.iter().find(|(_, e)| !e.used) {
            Some((k, e)) => Err(ScenarioError::Parse {
                line: e.line,
                field: self.field(k),
                msg: "unknown key".into(),
            }),
            None => Ok(()),
        }
    }
}

fn parse_nodes(v: &str) -> Option<Vec<NodeId>> {
    if v.trim().is_empty() {
        return Some(Vec::new());
    }
    v.split(',').map(|p| p.trim().parse().ok().map(NodeId)).collect()
}

fn parse_match(v: &str) -> Option<FlowMatch> {
    let (src, rest) = v.split_once('>')?;
    let (dst, ty) = rest.split_once(':')?;
    let node = |s: &str| -> Option<Option<NodeId>> {
        match s.trim() {
            "*" => Some(None),
            n => n.parse().ok().map(|n| Some(NodeId(n))),
        }
    };
    let msg_type = match ty.trim() {
        "*" => None,
        t => Some(MsgType::from_name(t)?),
    };
    Some(FlowMatch {
        src: node(src)?,
        dst: node(dst)?,
        msg_type,
    })
}

fn lex(text: &str) -> Result<Vec<Section>, ScenarioError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with(';') {
            continue;
        }
        if let Some(inner) = l.strip_prefix('[') {
            let name = inner.strip_suffix(']').ok_or_else(|| ScenarioError::Parse {
                line,
                field: "section".into(),
                msg: "unterminated section header".into(),
            })?;
            let name = name.trim().to_string();
            if sections.iter().any(|s| s.name == name) {
                return Err(ScenarioError::Parse {
                    line,
                    field: name,
                    msg: "duplicate section".into(),
                });
            }
            sections.push(Section {
                name,
                line,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let Some((k, v)) = l.split_once('=') else {
            return Err(ScenarioError::Parse {
                line,
                field: "line".into(),
                msg: "expected 'key = value'".into(),
            });
        };
        let Some(sec) = sections.last_mut() else {
            return Err(ScenarioError::Parse {
                line,
                field: k.trim().into(),
                msg: "key outside any section".into(),
            });
        };
        let key = k.trim().to_string();
        if sec.entries.contains_key(&key) {
            return Err(ScenarioError::Parse {
                line,
                field: sec.field(&key),
                msg: "duplicate key".into(),
            });
        }
        sec.entries.insert(
            key,
            Entry {
                value: v.trim().to_string(),
                line,
                used: false,
            },
        );
    }
    Ok(sections)
}

/// Index suffix of `attacks.N` / `policy.N`, which must count up from 0.
fn indexed(sec: &Section, prefix: &str, expected: usize) -> Result<bool, ScenarioError> {
    let Some(idx) = sec.name.strip_prefix(prefix) else {
        return Ok(false);
    };
    match idx.parse::<usize>() {
        Ok(n) if n == expected => Ok(true),
        _ => Err(ScenarioError::Parse {
            line: sec.line,
            field: sec.name.clone(),
            msg: format!("expected section {prefix}{expected}"),
        }),
    }
}

/// Parses and validates a scenario file; unspecified keys keep defaults.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let mut spec = ScenarioSpec::default();
    for mut sec in lex(text)? {
        match sec.name.as_str() {
            "scenario" => {
                if let Some((v, _)) = sec.raw("name") {
                    spec.name = v;
                }
                sec.get("duration", &mut spec.duration)?;
                sec.get("seed", &mut spec.seed)?;
            }
            "topology" => {
                let t = &mut spec.topology;
                sec.get("clusters", &mut t.clusters)?;
                sec.get("devices_per_cluster", &mut t.devices_per_cluster)?;
                sec.get("link_loss_rate", &mut t.link_loss_rate)?;
            }
            "modules" => {
                if let Some((v, line)) = sec.raw("enabled") {
                    let mut set = ModuleSet::none();
                    for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        let m = Module::from_name(name).ok_or_else(|| ScenarioError::Parse {
                            line,
                            field: "modules.enabled".into(),
                            msg: format!("unknown module '{name}'"),
                        })?;
                        set.insert(m);
                    }
                    spec.modules = set;
                }
            }
            "traffic" => {
                let t = &mut spec.traffic;
                sec.get("reading_period", &mut t.reading_period)?;
                sec.get("max_reading", &mut t.max_reading)?;
                sec.get("service_period", &mut t.service_period)?;
                sec.get("honest_cooperation", &mut t.honest_cooperation)?;
                sec.with("aggregate", &mut t.aggregate, AggregateMode::from_name)?;
                sec.get("aggregators", &mut t.aggregators)?;
            }
            "trust" => {
                let t = &mut spec.trust;
                sec.get("alpha", &mut t.alpha)?;
                sec.get("initial", &mut t.initial)?;
                sec.get("threshold", &mut t.threshold)?;
                sec.get("min_history", &mut t.min_history)?;
            }
            "detector" => {
                let d = &mut spec.detector;
                sec.get("window", &mut d.window)?;
                sec.get("dos_rate_multiplier", &mut d.dos_rate_multiplier)?;
                sec.get("scan_fanout_limit", &mut d.scan_fanout_limit)?;
                sec.get("auth_failure_limit", &mut d.auth_failure_limit)?;
                sec.get("integrity_failure_limit", &mut d.integrity_failure_limit)?;
                sec.get("baseline_learning_windows", &mut d.baseline_learning_windows)?;
            }
            "crypto" => sec.with("curve", &mut spec.curve, CurveProfile::from_name)?,
            "keys" => sec.get("lifetime", &mut spec.key_lifetime)?,
            "authn" => {
                sec.get("session_timeout", &mut spec.session_timeout)?;
                sec.get("grant_lifetime", &mut spec.grant_lifetime)?;
            }
            "roles" => sec.nodes("operators", &mut spec.operators)?,
            _ if indexed(&sec, "attacks.", spec.attacks.len())? => {
                let mut kind = None;
                sec.with("kind", &mut kind, |v| AttackKind::from_name(v).map(Some))?;
                let kind = kind.ok_or_else(|| ScenarioError::Parse {
                    line: sec.line,
                    field: sec.field("kind"),
                    msg: "missing".into(),
                })?;
                let mut a = AttackSpec::new(kind, NodeId(0), None, 0, spec.duration);
                a.attackers.clear();
                sec.nodes("attackers", &mut a.attackers)?;
                let mut victim = u32::MAX;
                sec.get("victim", &mut victim)?;
                a.victim = (victim != u32::MAX).then_some(NodeId(victim));
                sec.get("start", &mut a.start)?;
                sec.get("end", &mut a.end)?;
                sec.get("rate", &mut a.rate)?;
                sec.get("cooperation", &mut a.cooperation)?;
                spec.attacks.push(a);
            }
            _ if indexed(&sec, "policy.", spec.policies.len())? => {
                let mut applies_to = PolicyTarget::Devices;
                sec.with("applies_to", &mut applies_to, |v| match v {
                    "devices" => Some(PolicyTarget::Devices),
                    _ => {
                        if let Some(n) = v.strip_prefix("node:") {
                            n.parse().ok().map(|n| PolicyTarget::Node(NodeId(n)))
                        } else {
                            v.strip_prefix("flow:").and_then(parse_match).map(PolicyTarget::Flow)
                        }
                    }
                })?;
                let mut effect = Effect::Permit;
                sec.with("effect", &mut effect, |v| match v {
                    "permit" => Some(Effect::Permit),
                    "deny" => Some(Effect::Deny),
                    _ => None,
                })?;
                let (text, line) = sec.raw("tree").ok_or_else(|| ScenarioError::Parse {
                    line: sec.line,
                    field: sec.field("tree"),
                    msg: "missing".into(),
                })?;
                let tree = parse_tree(&text).map_err(|e| ScenarioError::Parse {
                    line,
                    field: sec.field("tree"),
                    msg: e.to_string(),
                })?;
                spec.policies.push(PolicySpec {
                    applies_to,
                    effect,
                    tree,
                });
            }
            other => {
                return Err(ScenarioError::Parse {
                    line: sec.line,
                    field: other.into(),
                    msg: "unknown section".into(),
                })
            }
        }
        sec.finish()?;
    }
    spec.topology.seed = spec.seed;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = parse_scenario("[scenario]\nname = tiny\n").unwrap();
        assert_eq!(s.name, "tiny");
        assert_eq!(s.traffic, TrafficSpec::default());
        assert_eq!(s.modules, ModuleSet::all());
        assert_eq!(s.topology.seed, s.seed);
    }

    #[test]
    fn privacy_without_keymgmt_is_rejected() {
        let e = parse_scenario("[modules]\nenabled = privacy\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Invalid { ref field, .. } if field == "modules.enabled"), "{e}");
    }

    #[test]
    fn errors_name_field_and_line() {
        let e = parse_scenario("[scenario]\nname = x\n\n[topology]\nclusters = two\n").unwrap_err();
        assert_eq!(
            e,
            ScenarioError::Parse {
                line: 5,
                field: "topology.clusters".into(),
                msg: "cannot read 'two'".into()
            }
        );
        let e = parse_scenario("[modules]\nenabled = privacy, crypto\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 2, .. }));
        let e = parse_scenario("[topology]\ncolour = red\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { ref field, .. } if field == "topology.colour"));
        let e = parse_scenario("[attacks.1]\nkind = dos\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 1, .. }));
    }

    #[test]
    fn attacks_and_policies_roundtrip() {
        let mut s = ScenarioSpec::default();
        s.attacks.push(AttackSpec::new(AttackKind::Spoof, NodeId(3), Some(NodeId(4)), 10, 20));
        let mut d = AttackSpec::new(AttackKind::Ddos, NodeId(3), None, 10, 20);
        d.attackers.push(NodeId(7));
        s.attacks.push(d);
        s.operators = vec![NodeId(5)];
        s.policies.push(PolicySpec {
            applies_to: PolicyTarget::Flow(FlowMatch::from_src(NodeId(6))),
            effect: Effect::Deny,
            tree: parse_tree("msg_type = control").unwrap(),
        });
        let again = parse_scenario(&s.render()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn attack_node_checks() {
        let mut s = ScenarioSpec::default();
        s.attacks.push(AttackSpec::new(AttackKind::Spoof, NodeId(1), Some(NodeId(4)), 10, 20));
        assert!(s.validate().is_err(), "head cannot attack");
        s.attacks[0] = AttackSpec::new(AttackKind::Spoof, NodeId(3), None, 10, 20);
        assert!(s.validate().is_err(), "spoof needs a victim");
        s.attacks[0] = AttackSpec::new(AttackKind::Dos, NodeId(3), None, 10, 2000);
        assert!(s.validate().is_err(), "ends after duration");
    }
}
