use std::fmt::{self, Write as _};

use super::spec::{AttackKind, ScenarioSpec};
use crate::gateway::{Controller, DeviceStatus};
use crate::simnet::{NodeId, Tick, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Prevented,
    Detected { latency: Tick },
    Missed,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Prevented => "prevented",
            Outcome::Detected { .. } => "detected",
            Outcome::Missed => "missed",
        }
    }

    pub fn is_detected(self) -> bool {
        matches!(self, Outcome::Detected { .. })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Detected { latency } => write!(f, "detected(latency={latency})"),
            o => f.write_str(o.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackOutcome {
    pub index: usize,
    pub kind: AttackKind,
    pub attackers: Vec<NodeId>,
    pub victim: Option<NodeId>,
    pub start: Tick,
    pub end: Tick,
    pub outcome: Outcome,
    /// A countermeasure answered the attack and it stopped succeeding
    /// from the next window on.
    pub contained: bool,
    /// Number of events in which the attack got what it was after.
    pub successes: u64,
    pub alert: Option<u64>,
    pub countermeasure: Option<u64>,
    pub countermeasure_at: Option<Tick>,
    /// Successes from the window after the first countermeasure on.
    pub after_countermeasure: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrustRow {
    pub node: NodeId,
    /// Neighbourhood trust, `None` while no rater has enough history.
    pub trust: Option<f64>,
    pub history: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlertRow {
    pub id: u64,
    pub kind: String,
    pub subject: String,
    pub raised_at: Tick,
    pub observed: u64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountermeasureRow {
    pub tick: Tick,
    pub id: u64,
    pub action: String,
    pub cause: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SinkSummary {
    pub closed: u64,
    /// Rounds whose aggregate equals what the contributors sent.
    pub correct: u64,
    pub wrong: u64,
    /// Rounds that aborted, e.g. for lack of aggregators.
    pub failed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub modules: String,
    pub duration: Tick,
    pub config: String,
    pub outcomes: Vec<AttackOutcome>,
    pub trust: Vec<TrustRow>,
    pub alerts: Vec<AlertRow>,
    pub countermeasures: Vec<CountermeasureRow>,
    pub sink: SinkSummary,
    pub registered: u64,
    pub events: u64,
    pub gateway_packets: u64,
    /// Learned per-flow rate per window, when mitigation ran.
    pub baseline_rate: Option<f64>,
    pub digest: String,
    pub violations: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
pub(super) fn build(
    spec: &ScenarioSpec,
    gw: &Controller,
    outcomes: Vec<AttackOutcome>,
    sink: SinkSummary,
    events: u64,
    gateway_packets: u64,
    digest: [u8; 32],
    violations: Vec<String>,
) -> RunReport {
    let topo = Topology::build(&spec.topology).expect("validated topology");
    let trust = topo
        .devices()
        .map(|d| {
            let peers = topo.cluster_peers(d);
            let t = gw.trust().neighborhood_trust(d, &peers);
            TrustRow {
                node: d,
                trust: t.map(|(v, _)| v),
                history: t.map_or(0, |(_, n)| n),
            }
        })
        .collect();
    let alerts = gw
        .alerts()
        .iter()
        .map(|a| AlertRow {
            id: a.id,
            kind: a.kind.name().to_string(),
            subject: a.subject.to_string(),
            raised_at: a.raised_at,
            observed: a.evidence.observed,
            threshold: a.evidence.threshold,
        })
        .collect();
    let countermeasures = gw
        .countermeasures()
        .iter()
        .map(|c| CountermeasureRow {
            tick: c.tick,
            id: c.cm.id,
            action: c.cm.action.to_string(),
            cause: c.cm.cause,
        })
        .collect();
    let registered = gw
        .registry()
        .values()
        .filter(|r| r.status == DeviceStatus::Registered)
        .count() as u64;
    RunReport {
        name: spec.name.clone(),
        seed: spec.seed,
        modules: spec.modules.to_string(),
        duration: spec.duration,
        config: spec.render(),
        outcomes,
        trust,
        alerts,
        countermeasures,
        sink,
        registered,
        events,
        gateway_packets,
        baseline_rate: gw.detector().baseline(),
        digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
        violations,
    }
}

fn nodes(ns: &[NodeId]) -> String {
    ns.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn aggregate_ok(&self) -> bool {
        self.sink.wrong == 0
    }

    /// Human-readable summary.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} seed {} modules {}", self.name, self.seed, self.modules);
        let _ = writeln!(
            s,
            "duration {} events {} gateway packets {} registered {}",
            self.duration, self.events, self.gateway_packets, self.registered
        );
        let _ = writeln!(s, "\nattacks");
        if self.outcomes.is_empty() {
            let _ = writeln!(s, "  none");
        }
        for o in &self.outcomes {
            let victim = o.victim.map_or("-".to_string(), |v| v.to_string());
            let _ = writeln!(
                s,
                "  #{} {:<20} by {:<8} on {:<4} [{}, {}) {:<22} contained={} successes={}",
                o.index,
                o.kind.name(),
                nodes(&o.attackers),
                victim,
                o.start,
                o.end,
                o.outcome.to_string(),
                o.contained,
                o.successes
            );
        }
        let _ = writeln!(s, "\ntrust");
        for t in &self.trust {
            match t.trust {
                Some(v) => {
                    let _ = writeln!(s, "  {:<4} {:.3} ({} encounters)", t.node, v, t.history);
                }
                None => {
                    let _ = writeln!(s, "  {:<4} -", t.node);
                }
            }
        }
        let _ = writeln!(s, "\nalerts");
        for a in &self.alerts {
            let _ = writeln!(
                s,
                "  #{} t={} {} {} observed={} threshold={:.2}",
                a.id, a.raised_at, a.kind, a.subject, a.observed, a.threshold
            );
        }
        let _ = writeln!(s, "\ncountermeasures");
        for c in &self.countermeasures {
            let _ = writeln!(s, "  #{} t={} {} (alert {})", c.id, c.tick, c.action, c.cause);
        }
        let _ = writeln!(
            s,
            "\naggregation rounds {} correct {} wrong {} failed {}",
            self.sink.closed, self.sink.correct, self.sink.wrong, self.sink.failed
        );
        if self.violations.is_empty() {
            let _ = writeln!(s, "invariants ok");
        }
        for v in &self.violations {
            let _ = writeln!(s, "invariant violated: {v}");
        }
        s
    }

    /// One `key=value` per line, for scripts.
    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("name", &self.name);
        kv("seed", &self.seed);
        kv("modules", &self.modules);
        kv("duration", &self.duration);
        kv("events", &self.events);
        kv("gateway_packets", &self.gateway_packets);
        kv("registered", &self.registered);
        if let Some(b) = self.baseline_rate {
            kv("baseline_rate", &format!("{b:.4}"));
        }
        kv("digest", &self.digest);
        kv("rounds_closed", &self.sink.closed);
        kv("rounds_correct", &self.sink.correct);
        kv("rounds_wrong", &self.sink.wrong);
        kv("rounds_failed", &self.sink.failed);
        kv("aggregate_ok", &self.aggregate_ok());
        kv("alerts", &self.alerts.len());
        kv("countermeasures", &self.countermeasures.len());
        kv("violations", &self.violations.len());
        for o in &self.outcomes {
            let p = format!("attack.{}", o.index);
            kv(&format!("{p}.kind"), &o.kind.name());
            kv(&format!("{p}.outcome"), &o.outcome.name());
            if let Outcome::Detected { latency } = o.outcome {
                kv(&format!("{p}.latency"), &latency);
            }
            kv(&format!("{p}.contained"), &o.contained);
            kv(&format!("{p}.successes"), &o.successes);
            kv(&format!("{p}.after_countermeasure"), &o.after_countermeasure);
        }
        for t in &self.trust {
            if let Some(v) = t.trust {
                kv(&format!("trust.{}", t.node), &format!("{v:.4}"));
            }
        }
        s
    }
}
