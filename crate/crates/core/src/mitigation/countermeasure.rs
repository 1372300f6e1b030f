use std::collections::BTreeSet;
use std::fmt;

use super::detector::{Alert, AlertKind, AlertSubject};
use crate::simnet::NodeId;
use crate::southbound::FlowMatch;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CmAction {
    /// Drop rule for the cluster head that `origin` (or the flow source)
    /// hangs off.
    InstallDropRule { matcher: FlowMatch, origin: Option<NodeId> },
    RevokeKeys(Vec<NodeId>),
    Quarantine(NodeId),
    /// Delete an entry the controller never installed.
    PurgeRule { head: NodeId, matcher: FlowMatch },
}

impl fmt::Display for CmAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmAction::InstallDropRule { matcher, .. } => write!(f, "drop_rule:{matcher}"),
            CmAction::RevokeKeys(nodes) => {
                write!(f, "revoke:")?;
                for (i, n) in nodes.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{n}")?;
                }
                Ok(())
            }
            CmAction::Quarantine(n) => write!(f, "quarantine:{n}"),
            CmAction::PurgeRule { head, matcher } => write!(f, "purge:{head}/{matcher}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Countermeasure {
    pub id: u64,
    pub action: CmAction,
    /// Id of the alert this answers.
    pub cause: u64,
    pub kind: AlertKind,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum DedupKey {
    Node(NodeId),
    Flow(crate::southbound::FlowKey),
    Target(NodeId),
    Rule(NodeId, FlowMatch),
}

fn dedup_key(subject: &AlertSubject) -> DedupKey {
    match subject {
        AlertSubject::Node(n) => DedupKey::Node(*n),
        AlertSubject::Flow(k) => DedupKey::Flow(*k),
        AlertSubject::Target { dst, .. } => DedupKey::Target(*dst),
        AlertSubject::Rule { head, matcher } => DedupKey::Rule(*head, *matcher),
    }
}

/// Maps alerts to countermeasures, suppressing repeats for a
/// `(kind, subject)` already answered.
#[derive(Clone, Debug, Default)]
pub struct Dispatcher {
    answered: BTreeSet<(AlertKind, DedupKey)>,
    next_id: u64,
    suppressed: u64,
}

impl Dispatcher {
    pub fn new() -> Self {
        Dispatcher::default()
    }

    pub fn suppressed(&self) -> u64 {
        self.suppressed
    }

    pub fn countermeasures(&mut self, alerts: &[Alert]) -> Vec<Countermeasure> {
        let mut out = Vec::new();
        for a in alerts {
            if !self.answered.insert((a.kind, dedup_key(&a.subject))) {
                self.suppressed += 1;
                continue;
            }
            let actions = match (&a.kind, &a.subject) {
                (AlertKind::Dos, AlertSubject::Flow(k)) => vec![CmAction::InstallDropRule {
                    matcher: FlowMatch::exact(k.src, k.dst, k.msg_type),
                    origin: a.origin,
                }],
                (AlertKind::Ddos, AlertSubject::Target { flows, .. }) => flows
                    .iter()
                    .map(|k| CmAction::InstallDropRule {
                        matcher: FlowMatch::exact(k.src, k.dst, k.msg_type),
                        origin: None,
                    })
                    .collect(),
                (AlertKind::Scan, AlertSubject::Node(n)) => vec![CmAction::InstallDropRule {
                    matcher: FlowMatch::from_src(*n),
                    origin: a.origin,
                }],
                (AlertKind::Spoofing, AlertSubject::Rule { head, matcher }) => vec![CmAction::PurgeRule {
                    head: *head,
                    matcher: *matcher,
                }],
                (AlertKind::Spoofing | AlertKind::Injection, AlertSubject::Node(n)) => {
                    vec![CmAction::RevokeKeys(vec![*n])]
                }
                (AlertKind::Impersonation, AlertSubject::Node(n)) => vec![CmAction::Quarantine(*n)],
                _ => Vec::new(),
            };
            for action in actions {
                self.next_id += 1;
                out.push(Countermeasure {
                    id: self.next_id,
                    action,
                    cause: a.id,
                    kind: a.kind,
                });
            }
        }
        out
    }
}
