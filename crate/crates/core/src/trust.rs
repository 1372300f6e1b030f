//! Encounter histories, reputation as an exponentially weighted moving
//! average, and neighbour-weighted trust gating service requests.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::simnet::{NodeId, Tick};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustError {
    #[error("trust is undefined for an empty neighbourhood")]
    EmptyNeighborhood,
    #[error("neighbour {0} has no trust state toward the target")]
    MissingState(NodeId),
    #[error("weights must be finite, non-negative and not all zero")]
    BadWeights,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrustConfig {
    pub alpha: f64,
    pub initial: f64,
    pub threshold: f64,
    /// Encounters a rater needs with a node before its opinion counts.
    pub min_history: u64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            alpha: 0.1,
            initial: 0.5,
            threshold: 0.7,
            min_history: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Encounter {
    pub a: NodeId,
    pub b: NodeId,
    pub index: u64,
    pub cooperated: bool,
    pub tick: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrustState {
    pub a: NodeId,
    pub b: NodeId,
    pub reputation: f64,
    pub count: u64,
}

impl TrustState {
    pub fn fresh(a: NodeId, b: NodeId, initial: f64) -> Self {
        TrustState {
            a,
            b,
            reputation: initial,
            count: 0,
        }
    }
}

/// `R' = (1 - α)·R + α·e`, clamped against rounding drift.
pub fn record_encounter(state: TrustState, cooperated: bool, alpha: f64) -> TrustState {
    let e = if cooperated { 1.0 } else { 0.0 };
    let r = ((1.0 - alpha) * state.reputation + alpha * e).clamp(0.0, 1.0);
    TrustState {
        reputation: r,
        count: state.count + 1,
        ..state
    }
}

pub fn trust_value(state: &TrustState) -> f64 {
    state.reputation
}

/// `Σ wᵢ·Tᵢ` with weights normalised to sum 1.
pub fn weighted_trust(weights: &[(NodeId, f64)], trusts: &BTreeMap<NodeId, f64>) -> Result<f64, TrustError> {
    if weights.is_empty() {
        return Err(TrustError::EmptyNeighborhood);
    }
    let total: f64 = weights.iter().map(|(_, w)| *w).sum();
    if weights.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || total <= 0.0 || !total.is_finite() {
        return Err(TrustError::BadWeights);
    }
    let mut acc = 0.0;
    for (n, w) in weights {
        let t = trusts.get(n).ok_or(TrustError::MissingState(*n))?;
        acc += (w / total) * t;
    }
    Ok(acc.clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeAssessment {
    pub node: NodeId,
    /// `None` while the node is still on probation or unregistered.
    pub trust: Option<f64>,
    pub history: u64,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assessment {
    pub decision: Decision,
    pub nodes: Vec<NodeAssessment>,
}

impl Assessment {
    pub fn offenders(&self) -> impl Iterator<Item = &NodeAssessment> {
        self.nodes.iter().filter(|n| n.reason.is_some())
    }
}

#[derive(Clone, Debug)]
pub struct TrustStore {
    cfg: TrustConfig,
    states: BTreeMap<(NodeId, NodeId), TrustState>,
    encounters: u64,
}

impl TrustStore {
    pub fn new(cfg: TrustConfig) -> Self {
        TrustStore {
            cfg,
            states: BTreeMap::new(),
            encounters: 0,
        }
    }

    pub fn config(&self) -> &TrustConfig {
        &self.cfg
    }

    pub fn state(&self, a: NodeId, b: NodeId) -> TrustState {
        self.states
            .get(&(a, b))
            .copied()
            .unwrap_or_else(|| TrustState::fresh(a, b, self.cfg.initial))
    }

    pub fn states(&self) -> impl Iterator<Item = &TrustState> {
        self.states.values()
    }

    pub fn encounter_total(&self) -> u64 {
        self.encounters
    }

    /// Records `a`'s verdict on an interaction with `b`.
    pub fn record(&mut self, a: NodeId, b: NodeId, cooperated: bool, tick: Tick) -> Encounter {
        let s = self.state(a, b);
        let next = record_encounter(s, cooperated, self.cfg.alpha);
        self.states.insert((a, b), next);
        self.encounters += 1;
        Encounter {
            a,
            b,
            index: next.count,
            cooperated,
            tick,
        }
    }

    /// Neighbour-weighted trust of `target` from every rater holding at
    /// least `min_history` encounters with it, weighted uniformly. Returns
    /// the value and the number of encounters behind it.
    pub fn neighborhood_trust(&self, target: NodeId, raters: &[NodeId]) -> Option<(f64, u64)> {
        let mut weights = Vec::new();
        let mut trusts = BTreeMap::new();
        let mut history = 0;
        for r in raters {
            if let Some(s) = self.states.get(&(*r, target)) {
                if s.count > 0 && s.count >= self.cfg.min_history {
                    weights.push((*r, 1.0));
                    trusts.insert(*r, trust_value(s));
                    history += s.count;
                }
            }
        }
        weighted_trust(&weights, &trusts).ok().map(|t| (t, history))
    }

    /// Allows iff every serving node's neighbourhood trust reaches the
    /// threshold. A node no rater has enough history with is on probation
    /// and passes; unregistered nodes are denied.
    pub fn assess_request(
        &self,
        serving: &[NodeId],
        is_registered: impl Fn(NodeId) -> bool,
        raters_of: impl Fn(NodeId) -> Vec<NodeId>,
    ) -> Assessment {
        let mut nodes = Vec::new();
        for s in serving {
            if !is_registered(*s) {
                nodes.push(NodeAssessment {
                    node: *s,
                    trust: None,
                    history: 0,
                    reason: Some("unregistered".into()),
                });
                continue;
            }
            let (trust, history) = match self.neighborhood_trust(*s, &raters_of(*s)) {
                Some((t, h)) => (Some(t), h),
                None => (None, 0),
            };
            let reason = match trust {
                Some(t) if t < self.cfg.threshold => Some(format!("trust {t:.4} below {}", self.cfg.threshold)),
                _ => None,
            };
            nodes.push(NodeAssessment {
                node: *s,
                trust,
                history,
                reason,
            });
        }
        let decision = if nodes.iter().any(|n| n.reason.is_some()) {
            Decision::Deny
        } else {
            Decision::Allow
        };
        Assessment { decision, nodes }
    }
}
