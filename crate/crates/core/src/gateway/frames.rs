use crate::simnet::{NodeId, Tick};
use crate::southbound::Reader;

/// Peer service brokered by the gateway and gated by trust.
pub const SERVICE_PEER: u32 = 1;
/// Gateway-side storage of collected readings.
pub const SERVICE_STORAGE: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ServiceOp {
    Use,
    Read,
    Write,
    Response,
    Result,
}

impl ServiceOp {
    pub const ALL: [ServiceOp; 5] = [
        ServiceOp::Use,
        ServiceOp::Read,
        ServiceOp::Write,
        ServiceOp::Response,
        ServiceOp::Result,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ServiceOp::Use => "use",
            ServiceOp::Read => "read",
            ServiceOp::Write => "write",
            ServiceOp::Response => "response",
            ServiceOp::Result => "result",
        }
    }

    pub fn service(self) -> u32 {
        match self {
            ServiceOp::Read | ServiceOp::Write => SERVICE_STORAGE,
            _ => SERVICE_PEER,
        }
    }
}

pub const STATUS_OK: u8 = 0;
pub const STATUS_DENIED: u8 = 1;
pub const STATUS_FAILED: u8 = 2;

/// Payload of a `service` packet:
/// `op u8 ‖ principal u32 ‖ target u32 ‖ request u32 ‖ status u8 ‖ body`.
/// `principal` is the identity the sender acts as.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceFrame {
    pub op: ServiceOp,
    pub principal: NodeId,
    pub target: NodeId,
    pub request: u32,
    pub status: u8,
    pub body: Vec<u8>,
}

impl ServiceFrame {
    pub fn new(op: ServiceOp, principal: NodeId, target: NodeId, request: u32) -> Self {
        ServiceFrame {
            op,
            principal,
            target,
            request,
            status: STATUS_OK,
            body: Vec::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.body.len());
        out.push(self.op.code());
        out.extend_from_slice(&self.principal.0.to_be_bytes());
        out.extend_from_slice(&self.target.0.to_be_bytes());
        out.extend_from_slice(&self.request.to_be_bytes());
        out.push(self.status);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        let op = *ServiceOp::ALL.get(r.u8().ok()? as usize)?;
        let principal = NodeId(r.u32().ok()?);
        let target = NodeId(r.u32().ok()?);
        let request = r.u32().ok()?;
        let status = r.u8().ok()?;
        if status > STATUS_FAILED {
            return None;
        }
        Some(ServiceFrame {
            op,
            principal,
            target,
            request,
            status,
            body: r.rest().to_vec(),
        })
    }
}

/// Payload of a `control` packet: `command u8 ‖ argument u32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlFrame {
    pub command: u8,
    pub argument: u32,
}

impl ControlFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.command];
        out.extend_from_slice(&self.argument.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        let command = r.u8().ok()?;
        let argument = r.u32().ok()?;
        r.finish().ok()?;
        Some(ControlFrame { command, argument })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JoinStatus {
    Accepted,
    Rejected,
    Renewed,
}

/// Gateway answer to a join or a key renewal, sent as a `join` packet:
/// `status u8 ‖ credential u64 ‖ valid_from u64 ‖ sealed bundle`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinReply {
    pub status: JoinStatus,
    pub credential: u64,
    pub valid_from: Tick,
    pub bundle: Vec<u8>,
}

impl JoinReply {
    pub fn rejected() -> Self {
        JoinReply {
            status: JoinStatus::Rejected,
            credential: 0,
            valid_from: 0,
            bundle: Vec::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![match self.status {
            JoinStatus::Accepted => 0,
            JoinStatus::Rejected => 1,
            JoinStatus::Renewed => 2,
        }];
        out.extend_from_slice(&self.credential.to_be_bytes());
        out.extend_from_slice(&self.valid_from.to_be_bytes());
        out.extend_from_slice(&self.bundle);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        let status = match r.u8().ok()? {
            0 => JoinStatus::Accepted,
            1 => JoinStatus::Rejected,
            2 => JoinStatus::Renewed,
            _ => return None,
        };
        let credential = r.u64().ok()?;
        let valid_from = r.u64().ok()?;
        Some(JoinReply {
            status,
            credential,
            valid_from,
            bundle: r.rest().to_vec(),
        })
    }
}
