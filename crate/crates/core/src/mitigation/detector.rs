use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::MitigationError;
use crate::audit::AuditLog;
use crate::simnet::{NodeId, Tick};
use crate::southbound::{FlowKey, FlowMatch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorConfig {
    pub window: Tick,
    pub dos_rate_multiplier: f64,
    pub scan_fanout_limit: u64,
    pub auth_failure_limit: u64,
    pub integrity_failure_limit: u64,
    pub baseline_learning_windows: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window: 100,
            dos_rate_multiplier: 5.0,
            scan_fanout_limit: 8,
            auth_failure_limit: 3,
            integrity_failure_limit: 3,
            baseline_learning_windows: 5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), MitigationError> {
        let ok = self.window > 0
            && self.dos_rate_multiplier > 0.0
            && self.dos_rate_multiplier.is_finite()
            && self.scan_fanout_limit > 0
            && self.auth_failure_limit > 0
            && self.integrity_failure_limit > 0
            && self.baseline_learning_windows > 0;
        if ok {
            Ok(())
        } else {
            Err(MitigationError::Config("every detector threshold must be positive".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlertKind {
    Scan,
    Spoofing,
    Injection,
    Impersonation,
    Dos,
    Ddos,
}

impl AlertKind {
    pub const ALL: [AlertKind; 6] = [
        AlertKind::Scan,
        AlertKind::Spoofing,
        AlertKind::Injection,
        AlertKind::Impersonation,
        AlertKind::Dos,
        AlertKind::Ddos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlertKind::Scan => "scan",
            AlertKind::Spoofing => "spoofing",
            AlertKind::Injection => "injection",
            AlertKind::Impersonation => "impersonation",
            AlertKind::Dos => "dos",
            AlertKind::Ddos => "ddos",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        AlertKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_rate_based(self) -> bool {
        matches!(self, AlertKind::Dos | AlertKind::Ddos | AlertKind::Scan)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlertSubject {
    Node(NodeId),
    Flow(FlowKey),
    /// Flows from several sources converging on one destination.
    Target { dst: NodeId, flows: Vec<FlowKey> },
    /// A flow entry on a cluster head that the controller never installed.
    Rule { head: NodeId, matcher: FlowMatch },
}

impl fmt::Display for AlertSubject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlertSubject::Node(n) => write!(f, "node:{n}"),
            AlertSubject::Flow(k) => write!(f, "flow:{k}"),
            AlertSubject::Target { dst, flows } => write!(f, "target:{dst}/{}", flows.len()),
            AlertSubject::Rule { head, matcher } => write!(f, "rule:{head}/{matcher}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evidence {
    pub observed: u64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alert {
    pub id: u64,
    pub kind: AlertKind,
    pub subject: AlertSubject,
    pub window: (Tick, Tick),
    pub evidence: Evidence,
    /// Ingress node the offending traffic physically came from, if known.
    pub origin: Option<NodeId>,
    pub raised_at: Tick,
}

/// One flow observation handed over by gateway flow accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowEvent {
    pub tick: Tick,
    pub key: FlowKey,
    pub bytes: u64,
    /// Device the packet physically entered from, when the ingress port
    /// identifies one.
    pub origin: Option<NodeId>,
    /// Claimed a registered identity it does not hold.
    pub spoofed: bool,
    pub integrity_failure: bool,
    pub auth_failure: bool,
    pub verdict: String,
}

#[derive(Clone, Debug, Default)]
struct Window {
    flows: BTreeMap<FlowKey, u64>,
    origins: BTreeMap<FlowKey, NodeId>,
    fanout: BTreeMap<NodeId, BTreeSet<NodeId>>,
    spoofed: BTreeMap<NodeId, (u64, Option<NodeId>)>,
    integrity: BTreeMap<NodeId, (u64, Option<NodeId>)>,
    auth: BTreeMap<NodeId, (u64, Option<NodeId>)>,
}

/// Threshold flow analyser over tumbling windows `[w·W, (w+1)·W)`.
#[derive(Clone, Debug)]
pub struct Detector {
    cfg: DetectorConfig,
    index: u64,
    current: Window,
    learned_packets: u64,
    learned_pairs: u64,
    baseline: Option<f64>,
    pending: Vec<Alert>,
    next_alert: u64,
    ingested: u64,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self, MitigationError> {
        cfg.validate()?;
        Ok(Detector {
            cfg,
            index: 0,
            current: Window::default(),
            learned_packets: 0,
            learned_pairs: 0,
            baseline: None,
            pending: Vec::new(),
            next_alert: 0,
            ingested: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Mean packets per active flow per window, once learning is over.
    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn dos_threshold(&self) -> Option<f64> {
        self.baseline.map(|b| b * self.cfg.dos_rate_multiplier)
    }

    pub fn ingested(&self) -> u64 {
        self.ingested
    }

    pub fn window_bounds(&self) -> (Tick, Tick) {
        (self.index * self.cfg.window, (self.index + 1) * self.cfg.window)
    }

    /// Packets of `key` in the current window.
    pub fn current_count(&self, key: &FlowKey) -> u64 {
        self.current.flows.get(key).copied().unwrap_or(0)
    }

    /// Adds the event to the window it falls in and appends its audit
    /// record. Earlier windows are closed first.
    pub fn ingest(&mut self, ev: &FlowEvent, audit: &mut AuditLog) {
        let w = ev.tick / self.cfg.window;
        while self.index < w {
            let alerts = self.close_current();
            self.pending.extend(alerts);
        }
        self.ingested += 1;
        audit.record(
            ev.tick,
            "mitigation",
            "flow",
            &[
                ("src", &ev.key.src),
                ("dst", &ev.key.dst),
                ("type", &ev.key.msg_type.name()),
                ("bytes", &ev.bytes),
                ("verdict", &ev.verdict),
            ],
        );
        let c = &mut self.current;
        *c.flows.entry(ev.key).or_default() += 1;
        if let Some(o) = ev.origin {
            c.origins.entry(ev.key).or_insert(o);
        }
        c.fanout.entry(ev.key.src).or_default().insert(ev.key.dst);
        let bump = |m: &mut BTreeMap<NodeId, (u64, Option<NodeId>)>, who: NodeId| {
            let e = m.entry(who).or_insert((0, ev.origin));
            e.0 += 1;
        };
        if ev.spoofed {
            // the claimed id is someone else's; blame the port it came from
            bump(&mut c.spoofed, ev.origin.unwrap_or(ev.key.src));
        }
        if ev.integrity_failure {
            bump(&mut c.integrity, ev.key.src);
        }
        if ev.auth_failure {
            bump(&mut c.auth, ev.key.src);
        }
    }

    /// Closes every window that ends at or before `now` and returns the
    /// alerts raised since the last call.
    pub fn advance(&mut self, now: Tick) -> Vec<Alert> {
        while (self.index + 1) * self.cfg.window <= now {
            let alerts = self.close_current();
            self.pending.extend(alerts);
        }
        std::mem::take(&mut self.pending)
    }

    fn alert(&mut self, kind: AlertKind, subject: AlertSubject, observed: u64, threshold: f64, origin: Option<NodeId>) -> Alert {
        self.next_alert += 1;
        let (start, end) = self.window_bounds();
        Alert {
            id: self.next_alert,
            kind,
            subject,
            window: (start, end),
            evidence: Evidence { observed, threshold },
            origin,
            raised_at: end,
        }
    }

    fn close_current(&mut self) -> Vec<Alert> {
        let win = std::mem::take(&mut self.current);
        let mut out = Vec::new();
        if self.index < self.cfg.baseline_learning_windows {
            self.learned_packets += win.flows.values().sum::<u64>();
            self.learned_pairs += win.flows.len() as u64;
            if self.index + 1 == self.cfg.baseline_learning_windows {
                let b = if self.learned_pairs == 0 {
                    1.0
                } else {
                    self.learned_packets as f64 / self.learned_pairs as f64
                };
                self.baseline = Some(b.max(1.0));
            }
        } else {
            out = self.analyze(&win);
        }
        self.index += 1;
        out
    }

    fn analyze(&mut self, win: &Window) -> Vec<Alert> {
        let mut out = Vec::new();
        let dos_limit = self.dos_threshold().expect("baseline learned before enforcement");
        let mut heavy: BTreeMap<NodeId, Vec<(FlowKey, u64)>> = BTreeMap::new();
        for (k, n) in &win.flows {
            if *n as f64 > dos_limit {
                heavy.entry(k.dst).or_default().push((*k, *n));
            }
        }
        for (dst, flows) in heavy {
            let sources: BTreeSet<NodeId> = flows.iter().map(|(k, _)| k.src).collect();
            if sources.len() >= 2 {
                let min = flows.iter().map(|(_, n)| *n).min().unwrap_or(0);
                let a = self.alert(
                    AlertKind::Ddos,
                    AlertSubject::Target {
                        dst,
                        flows: flows.iter().map(|(k, _)| *k).collect(),
                    },
                    min,
                    dos_limit,
                    None,
                );
                out.push(a);
            } else {
                for (k, n) in flows {
                    let origin = win.origins.get(&k).copied();
                    let a = self.alert(AlertKind::Dos, AlertSubject::Flow(k), n, dos_limit, origin);
                    out.push(a);
                }
            }
        }
        let k = self.cfg.scan_fanout_limit;
        for (src, dsts) in &win.fanout {
            if dsts.len() as u64 > k {
                let origin = win.origins.iter().find(|(key, _)| key.src == *src).map(|(_, o)| *o);
                let a = self.alert(AlertKind::Scan, AlertSubject::Node(*src), dsts.len() as u64, k as f64, origin);
                out.push(a);
            }
        }
        for (node, (n, origin)) in &win.spoofed {
            if *n > 0 {
                let a = self.alert(AlertKind::Spoofing, AlertSubject::Node(*node), *n, 0.0, *origin);
                out.push(a);
            }
        }
        let limit = self.cfg.integrity_failure_limit;
        for (node, (n, origin)) in &win.integrity {
            if *n > limit {
                let a = self.alert(AlertKind::Injection, AlertSubject::Node(*node), *n, limit as f64, *origin);
                out.push(a);
            }
        }
        let limit = self.cfg.auth_failure_limit;
        for (node, (n, origin)) in &win.auth {
            if *n > limit {
                let a = self.alert(AlertKind::Impersonation, AlertSubject::Node(*node), *n, limit as f64, *origin);
                out.push(a);
            }
        }
        out
    }

    /// Raises a spoofing alert for a flow entry found on `head` that the
    /// controller never installed.
    pub fn rogue_rule(&mut self, head: NodeId, matcher: FlowMatch, packets: u64, now: Tick) -> Alert {
        self.next_alert += 1;
        let w = self.cfg.window;
        Alert {
            id: self.next_alert,
            kind: AlertKind::Spoofing,
            subject: AlertSubject::Rule { head, matcher },
            window: ((now / w) * w, (now / w + 1) * w),
            evidence: Evidence {
                observed: packets.max(1),
                threshold: 0.0,
            },
            origin: None,
            raised_at: now,
        }
    }
}
