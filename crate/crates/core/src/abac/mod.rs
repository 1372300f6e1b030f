//! Attribute-based access control: boolean access trees over attribute
//! predicates, per-subject policies derived from templates, and flow
//! authorisation with default deny.

mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::simnet::{NodeId, Tick};
use crate::southbound::{FlowKey, FlowMatch};

pub use parse::parse_tree;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttrValue {
    Int(i64),
    Str(String),
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Int(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Str(v.to_string())
    }
}

pub type AttributeSet = BTreeMap<String, AttrValue>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Ge,
    In,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Ge => ">=",
            Op::In => "in",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub name: String,
    pub op: Op,
    /// One value, or the candidate list for `in`.
    pub values: Vec<AttrValue>,
}

impl Predicate {
    pub fn new(name: &str, op: Op, value: impl Into<AttrValue>) -> Self {
        Predicate {
            name: name.to_string(),
            op,
            values: vec![value.into()],
        }
    }

    pub fn one_of(name: &str, values: Vec<AttrValue>) -> Self {
        Predicate {
            name: name.to_string(),
            op: Op::In,
            values,
        }
    }

    /// False when the attribute is missing; `<` and `>=` are false across
    /// mismatched types.
    pub fn holds(&self, attrs: &AttributeSet) -> bool {
        let Some(v) = attrs.get(&self.name) else {
            return false;
        };
        let first = self.values.first();
        match self.op {
            Op::Eq => first == Some(v),
            Op::Ne => first.is_some_and(|x| x != v),
            Op::Lt => match (v, first) {
                (AttrValue::Int(a), Some(AttrValue::Int(b))) => a < b,
                (AttrValue::Str(a), Some(AttrValue::Str(b))) => a < b,
                _ => false,
            },
            Op::Ge => match (v, first) {
                (AttrValue::Int(a), Some(AttrValue::Int(b))) => a >= b,
                (AttrValue::Str(a), Some(AttrValue::Str(b))) => a >= b,
                _ => false,
            },
            Op::In => self.values.contains(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    And,
    Or,
    /// At least `k` children true.
    Threshold(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AccessTree {
    Leaf(Predicate),
    Node { gate: Gate, children: Vec<AccessTree> },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbacError {
    #[error("gate without children")]
    EmptyGate,
    #[error("threshold {k} of {m} children")]
    BadThreshold { k: usize, m: usize },
    #[error("`in` needs at least one value, other operators exactly one")]
    BadArity,
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("template placeholder ${0} has no binding")]
    UnknownPlaceholder(String),
    #[error("attribute {0} is not in the vocabulary")]
    UnknownAttribute(String),
}

impl AccessTree {
    pub fn leaf(p: Predicate) -> Self {
        AccessTree::Leaf(p)
    }

    pub fn and(children: Vec<AccessTree>) -> Self {
        AccessTree::Node {
            gate: Gate::And,
            children,
        }
    }

    pub fn or(children: Vec<AccessTree>) -> Self {
        AccessTree::Node {
            gate: Gate::Or,
            children,
        }
    }

    pub fn threshold(k: usize, children: Vec<AccessTree>) -> Self {
        AccessTree::Node {
            gate: Gate::Threshold(k),
            children,
        }
    }

    pub fn validate(&self) -> Result<(), AbacError> {
        match self {
            AccessTree::Leaf(p) => {
                let ok = match p.op {
                    Op::In => !p.values.is_empty(),
                    _ => p.values.len() == 1,
                };
                if ok {
                    Ok(())
                } else {
                    Err(AbacError::BadArity)
                }
            }
            AccessTree::Node { gate, children } => {
                if children.is_empty() {
                    return Err(AbacError::EmptyGate);
                }
                if let Gate::Threshold(k) = gate {
                    if *k == 0 || *k > children.len() {
                        return Err(AbacError::BadThreshold {
                            k: *k,
                            m: children.len(),
                        });
                    }
                }
                children.iter().try_for_each(AccessTree::validate)
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            AccessTree::Leaf(_) => 1,
            AccessTree::Node { children, .. } => 1 + children.iter().map(AccessTree::depth).max().unwrap_or(0),
        }
    }

    pub fn attribute_names(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            AccessTree::Leaf(p) => {
                out.insert(p.name.as_str());
            }
            AccessTree::Node { children, .. } => children.iter().for_each(|c| c.collect_names(out)),
        }
    }

    /// Replaces `$name` string values with the bound attribute values.
    pub fn instantiate(&self, bindings: &AttributeSet) -> Result<AccessTree, AbacError> {
        match self {
            AccessTree::Leaf(p) => {
                let values = p
                    .values
                    .iter()
                    .map(|v| match v {
                        AttrValue::Str(s) if s.starts_with('$') => bindings
                            .get(&s[1..])
                            .cloned()
                            .ok_or_else(|| AbacError::UnknownPlaceholder(s[1..].to_string())),
                        other => Ok(other.clone()),
                    })
                    .collect::<Result<_, _>>()?;
                Ok(AccessTree::Leaf(Predicate {
                    name: p.name.clone(),
                    op: p.op,
                    values,
                }))
            }
            AccessTree::Node { gate, children } => Ok(AccessTree::Node {
                gate: *gate,
                children: children
                    .iter()
                    .map(|c| c.instantiate(bindings))
                    .collect::<Result<_, _>>()?,
            }),
        }
    }
}

/// Recursive gate evaluation. Total over any attribute set.
pub fn evaluate(tree: &AccessTree, attrs: &AttributeSet) -> bool {
    match tree {
        AccessTree::Leaf(p) => p.holds(attrs),
        AccessTree::Node { gate, children } => {
            let mut hits = children.iter().map(|c| evaluate(c, attrs));
            match gate {
                Gate::And => hits.all(|b| b),
                Gate::Or => hits.any(|b| b),
                Gate::Threshold(k) => hits.filter(|b| *b).count() >= *k,
            }
        }
    }
}

fn fmt_value(v: &AttrValue, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match v {
        AttrValue::Int(i) => write!(f, "{i}"),
        AttrValue::Str(s) => {
            let bare = !s.is_empty()
                && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '$'))
                && !s.starts_with(|c: char| c.is_ascii_digit() || c == '-');
            if bare {
                write!(f, "{s}")
            } else {
                write!(f, "\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
            }
        }
    }
}

impl fmt::Display for AccessTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessTree::Leaf(p) => {
                write!(f, "{} {} ", p.name, p.op.symbol())?;
                if p.op == Op::In {
                    write!(f, "[")?;
                    for (i, v) in p.values.iter().enumerate() {
                        if i > 0 {
                            write!(f, ", ")?;
                        }
                        fmt_value(v, f)?;
                    }
                    write!(f, "]")
                } else {
                    fmt_value(&p.values[0], f)
                }
            }
            AccessTree::Node { gate, children } => {
                match gate {
                    Gate::And => write!(f, "and(")?,
                    Gate::Or => write!(f, "or(")?,
                    Gate::Threshold(k) => write!(f, "th({k}, ")?,
                }
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Effect {
    Permit,
    Deny,
}

impl Effect {
    pub fn name(self) -> &'static str {
        match self {
            Effect::Permit => "permit",
            Effect::Deny => "deny",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subject {
    Node(NodeId),
    Flow(FlowMatch),
}

impl Subject {
    fn covers(&self, key: &FlowKey) -> bool {
        match self {
            Subject::Node(n) => key.src == *n,
            Subject::Flow(m) => m.matches_key(key),
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Node(n) => write!(f, "node:{n}"),
            Subject::Flow(m) => write!(f, "flow:{m}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub id: u64,
    pub subject: Subject,
    pub tree: AccessTree,
    pub effect: Effect,
    pub stored_at: Tick,
}

/// Access tree with `$node`, `$cluster`, `$role` or `$epoch` placeholders.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyTemplate {
    pub name: String,
    pub tree: AccessTree,
    pub effect: Effect,
}

pub const TEMPLATE_BINDINGS: [&str; 4] = ["node", "cluster", "role", "epoch"];

/// Attributes a device's policy template may bind.
pub fn device_bindings(node: NodeId, cluster: u32, role: &str, epoch: u32) -> AttributeSet {
    let mut a = AttributeSet::new();
    a.insert("node".into(), AttrValue::Int(node.0 as i64));
    a.insert("cluster".into(), AttrValue::Int(cluster as i64));
    a.insert("role".into(), AttrValue::Str(role.into()));
    a.insert("epoch".into(), AttrValue::Int(epoch as i64));
    a
}

/// Adds the flow's header fields (`src`, `dst`, `msg_type`) to `attrs`.
pub fn flow_attributes(key: &FlowKey, attrs: &AttributeSet) -> AttributeSet {
    let mut a = attrs.clone();
    a.insert("src".into(), AttrValue::Int(key.src.0 as i64));
    a.insert("dst".into(), AttrValue::Int(key.dst.0 as i64));
    a.insert("msg_type".into(), AttrValue::Str(key.msg_type.name().into()));
    a
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DenyReason {
    NoPolicy,
    NoMatchingPermit,
    ExplicitDeny(u64),
}

impl DenyReason {
    pub fn name(&self) -> &'static str {
        match self {
            DenyReason::NoPolicy => "no-policy",
            DenyReason::NoMatchingPermit => "no-matching-permit",
            DenyReason::ExplicitDeny(_) => "explicit-deny",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AccessDecision {
    Permit(u64),
    Deny(DenyReason),
}

impl AccessDecision {
    pub fn is_permit(&self) -> bool {
        matches!(self, AccessDecision::Permit(_))
    }
}

/// One live policy per subject. Flow-pattern policies are consulted before
/// node policies; within each group, in subject order. The first policy
/// whose tree holds decides.
#[derive(Clone, Debug, Default)]
pub struct PolicyStore {
    policies: BTreeMap<Subject, Policy>,
    next_id: u64,
    vocabulary: Option<BTreeSet<String>>,
}

impl PolicyStore {
    pub fn new() -> Self {
        PolicyStore::default()
    }

    /// Restricts trees to the given attribute names.
    pub fn with_vocabulary(vocab: impl IntoIterator<Item = String>) -> Self {
        PolicyStore {
            vocabulary: Some(vocab.into_iter().collect()),
            ..Default::default()
        }
    }

    fn check_vocabulary(&self, tree: &AccessTree) -> Result<(), AbacError> {
        if let Some(v) = &self.vocabulary {
            if let Some(bad) = tree.attribute_names().into_iter().find(|n| !v.contains(*n)) {
                return Err(AbacError::UnknownAttribute(bad.to_string()));
            }
        }
        Ok(())
    }

    /// Stores a policy, superseding any live one for the same subject.
    pub fn store(&mut self, subject: Subject, tree: AccessTree, effect: Effect, now: Tick) -> Result<&Policy, AbacError> {
        tree.validate()?;
        self.check_vocabulary(&tree)?;
        self.next_id += 1;
        self.policies.insert(
            subject,
            Policy {
                id: self.next_id,
                subject,
                tree,
                effect,
                stored_at: now,
            },
        );
        Ok(&self.policies[&subject])
    }

    /// Instantiates `template` with the device's bindings and stores the
    /// result as the device's policy.
    pub fn derive_policy(
        &mut self,
        node: NodeId,
        bindings: &AttributeSet,
        template: &PolicyTemplate,
        now: Tick,
    ) -> Result<&Policy, AbacError> {
        let tree = template.tree.instantiate(bindings)?;
        self.store(Subject::Node(node), tree, template.effect, now)
    }

    pub fn remove(&mut self, subject: &Subject) -> Option<Policy> {
        self.policies.remove(subject)
    }

    pub fn get(&self, subject: &Subject) -> Option<&Policy> {
        self.policies.get(subject)
    }

    pub fn policies(&self) -> impl Iterator<Item = &Policy> {
        self.ordered()
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    fn ordered(&self) -> impl Iterator<Item = &Policy> {
        let flows = self.policies.values().filter(|p| matches!(p.subject, Subject::Flow(_)));
        let nodes = self.policies.values().filter(|p| matches!(p.subject, Subject::Node(_)));
        flows.chain(nodes)
    }

    /// `attrs` are the requesting entity's attributes; the flow's header
    /// fields are added before evaluation.
    pub fn authorize_flow(&self, key: &FlowKey, attrs: &AttributeSet) -> AccessDecision {
        let full = flow_attributes(key, attrs);
        let mut any = false;
        for p in self.ordered().filter(|p| p.subject.covers(key)) {
            any = true;
            if evaluate(&p.tree, &full) {
                return match p.effect {
                    Effect::Permit => AccessDecision::Permit(p.id),
                    Effect::Deny => AccessDecision::Deny(DenyReason::ExplicitDeny(p.id)),
                };
            }
        }
        AccessDecision::Deny(if any {
            DenyReason::NoMatchingPermit
        } else {
            DenyReason::NoPolicy
        })
    }
}
