//! IoT controller running on the gateway: device registry, flow
//! accounting, the data pipeline that runs every enabled security module,
//! aggregation sink and the southbound side towards cluster heads.

mod controller;
mod frames;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::abac::AbacError;
use crate::hash::{hmac_sha256, tags_equal};
use crate::keymgmt::KeyError;
use crate::mitigation::Countermeasure;
use crate::privacy::{AggregateResult, PrivacyError};
use crate::simnet::{NodeId, Port, Tick};
use crate::southbound::{decode_prefix, encode, FlowKey, Message};

pub use controller::{default_device_template, Controller, GatewayConfig, Outbound, DEFAULT_DEVICE_POLICY};
pub use frames::{
    ControlFrame, JoinReply, JoinStatus, ServiceFrame, ServiceOp, SERVICE_PEER, SERVICE_STORAGE, STATUS_DENIED,
    STATUS_FAILED, STATUS_OK,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("key management: {0}")]
    Key(#[from] KeyError),
    #[error("privacy: {0}")]
    Privacy(#[from] PrivacyError),
    #[error("access control: {0}")]
    Abac(#[from] AbacError),
    #[error("missing bootstrap key for node {0}")]
    NoBootstrap(NodeId),
    #[error("mitigation: {0}")]
    Mitigation(#[from] crate::mitigation::MitigationError),
}

/// The six security modules of the framework.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Module {
    Privacy,
    Trust,
    KeyMgmt,
    AuthN,
    AccessControl,
    Mitigation,
}

impl Module {
    pub const ALL: [Module; 6] = [
        Module::Privacy,
        Module::Trust,
        Module::KeyMgmt,
        Module::AuthN,
        Module::AccessControl,
        Module::Mitigation,
    ];

    /// Name used in scenario files.
    pub fn name(self) -> &'static str {
        match self {
            Module::Privacy => "privacy",
            Module::Trust => "trust",
            Module::KeyMgmt => "keymgmt",
            Module::AuthN => "authn",
            Module::AccessControl => "abac",
            Module::Mitigation => "mitigation",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Module::Privacy => "Privacy",
            Module::Trust => "Trust",
            Module::KeyMgmt => "Key Management",
            Module::AuthN => "Authentication",
            Module::AccessControl => "Access Control",
            Module::Mitigation => "Mitigation",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Module::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Modules this one cannot run without.
    pub fn requires(self) -> &'static [Module] {
        match self {
            Module::Privacy | Module::AuthN => &[Module::KeyMgmt],
            _ => &[],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ModuleSet(BTreeSet<Module>);

impl ModuleSet {
    pub fn none() -> Self {
        ModuleSet::default()
    }

    pub fn all() -> Self {
        ModuleSet(Module::ALL.into_iter().collect())
    }

    pub fn of(mods: &[Module]) -> Self {
        ModuleSet(mods.iter().copied().collect())
    }

    pub fn contains(&self, m: Module) -> bool {
        self.0.contains(&m)
    }

    pub fn insert(&mut self, m: Module) {
        self.0.insert(m);
    }

    pub fn iter(&self) -> impl Iterator<Item = Module> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First `(module, requirement)` pair that is not satisfied.
    pub fn missing_dependency(&self) -> Option<(Module, Module)> {
        self.iter()
            .find_map(|m| m.requires().iter().find(|r| !self.contains(**r)).map(|r| (m, *r)))
    }

    /// The set with `m` removed together with every module needing it.
    pub fn without(&self, m: Module) -> Self {
        let mut out = self.clone();
        out.0.remove(&m);
        while let Some((dep, _)) = out.missing_dependency() {
            out.0.remove(&dep);
        }
        out
    }
}

impl fmt::Display for ModuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Module::name).collect();
        write!(f, "{}", names.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeviceStatus {
    Pending,
    Registered,
    Revoked,
    Quarantined,
}

impl DeviceStatus {
    pub fn name(self) -> &'static str {
        match self {
            DeviceStatus::Pending => "pending",
            DeviceStatus::Registered => "registered",
            DeviceStatus::Revoked => "revoked",
            DeviceStatus::Quarantined => "quarantined",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceRecord {
    pub node: NodeId,
    pub cluster: u32,
    pub head: NodeId,
    pub port: Port,
    pub role: String,
    pub status: DeviceStatus,
    pub epoch: u32,
    pub credential_ref: Option<u64>,
    pub policy_ref: Option<u64>,
    pub registered_at: Option<Tick>,
}

/// Per-flow accounting at the gateway.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub packets: u64,
    pub bytes: u64,
    pub first_seen: Tick,
    pub last_seen: Tick,
    pub verdicts: BTreeMap<Verdict, u64>,
}

/// What the gateway did with one packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    Accepted,
    Duplicate,
    Stale,
    Unregistered,
    Revoked,
    Quarantined,
    Spoofed,
    Denied,
    IntegrityFailure,
    Malformed,
    AuthRequired,
    AuthFailure,
    TrustDenied,
    NoRoute,
    Ignored,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Accepted => "ok",
            Verdict::Duplicate => "duplicate",
            Verdict::Stale => "stale",
            Verdict::Unregistered => "unregistered",
            Verdict::Revoked => "revoked",
            Verdict::Quarantined => "quarantined",
            Verdict::Spoofed => "spoofed",
            Verdict::Denied => "denied",
            Verdict::IntegrityFailure => "integrity",
            Verdict::Malformed => "malformed",
            Verdict::AuthRequired => "auth_required",
            Verdict::AuthFailure => "auth_failed",
            Verdict::TrustDenied => "untrusted",
            Verdict::NoRoute => "no_route",
            Verdict::Ignored => "ignored",
        }
    }

    pub fn is_integrity_failure(self) -> bool {
        matches!(self, Verdict::IntegrityFailure | Verdict::Malformed)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Facts the controller records for later evaluation of a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observation {
    Packet {
        tick: Tick,
        key: FlowKey,
        origin: Option<NodeId>,
        verdict: Verdict,
    },
    Registered {
        tick: Tick,
        node: NodeId,
    },
    Forwarded {
        tick: Tick,
        requester: NodeId,
        server: NodeId,
    },
    TrustDenied {
        tick: Tick,
        requester: NodeId,
        server: NodeId,
    },
    StorageRead {
        tick: Tick,
        src: NodeId,
        principal: NodeId,
        target: NodeId,
        entries: usize,
    },
    StorageWrite {
        tick: Tick,
        src: NodeId,
        principal: NodeId,
        target: NodeId,
    },
    ControlExecuted {
        tick: Tick,
        src: NodeId,
        command: u8,
    },
    Granted {
        tick: Tick,
        src: NodeId,
        principal: NodeId,
        service: u32,
    },
}

/// One closed aggregation round as delivered to the sink.
#[derive(Clone, Debug, PartialEq)]
pub struct SinkRecord {
    pub round: u32,
    pub closed_at: Tick,
    /// `Err` carries the incident text when the round aborted.
    pub result: Result<AggregateResult, String>,
    pub contributors: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppliedCountermeasure {
    pub tick: Tick,
    pub cm: Countermeasure,
}

fn control_tag(key: &[u8; 32], frame: &[u8]) -> [u8; 32] {
    hmac_sha256(key, &[b"control", frame])
}

/// Encodes a controller message; with a key, appends an HMAC trailer.
pub fn seal_control(key: Option<&[u8; 32]>, msg: &Message) -> Vec<u8> {
    let mut bytes = encode(msg).expect("controller messages fit the wire format");
    if let Some(k) = key {
        let tag = control_tag(k, &bytes);
        bytes.extend_from_slice(&tag);
    }
    bytes
}

/// Decodes a frame received from the controller. With a key the trailer
/// must be present and valid; without one the frame must decode exactly.
pub fn open_control(key: Option<&[u8; 32]>, bytes: &[u8]) -> Option<Message> {
    match key {
        None => crate::southbound::decode(bytes).ok(),
        Some(k) => {
            let (msg, used) = decode_prefix(bytes).ok()?;
            let trailer = &bytes[used..];
            (trailer.len() == 32 && tags_equal(trailer, &control_tag(k, &bytes[..used]))).then_some(msg)
        }
    }
}

#[cfg(test)]
mod tests;
