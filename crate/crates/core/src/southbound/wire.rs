use thiserror::Error;

use crate::simnet::{NodeId, Port};

pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 4;
/// Kind byte of a data frame, the first byte on the wire.
pub const DATA_KIND: u8 = 0x08;
const WILDCARD_NODE: u32 = 0xFFFF_FFFF;
const WILDCARD_TYPE: u8 = 0xFF;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("body of {0} bytes exceeds 65535")]
    TooLong(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("unsupported version {0:#04x}")]
    Version(u8),
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("invalid field {0}")]
    Field(&'static str),
    #[error("length field disagrees with body")]
    Length,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgType {
    Reading,
    Join,
    Auth,
    Service,
    Control,
}

impl MsgType {
    pub const ALL: [MsgType; 5] = [
        MsgType::Reading,
        MsgType::Join,
        MsgType::Auth,
        MsgType::Service,
        MsgType::Control,
    ];

    pub fn code(self) -> u8 {
        match self {
            MsgType::Reading => 0,
            MsgType::Join => 1,
            MsgType::Auth => 2,
            MsgType::Service => 3,
            MsgType::Control => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        MsgType::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Reading => "reading",
            MsgType::Join => "join",
            MsgType::Auth => "auth",
            MsgType::Service => "service",
            MsgType::Control => "control",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        MsgType::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// An end-to-end data packet carried between devices and the gateway.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub src: NodeId,
    pub dst: NodeId,
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn new(src: NodeId, dst: NodeId, msg_type: MsgType, payload: Vec<u8>) -> Self {
        Packet {
            src,
            dst,
            msg_type,
            payload,
        }
    }

    /// Size in bytes as accounted by flow counters.
    pub fn wire_len(&self) -> u64 {
        (HEADER_LEN + 9 + self.payload.len()) as u64
    }
}

/// Flow identity: the header triple of a data packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src: NodeId,
    pub dst: NodeId,
    pub msg_type: MsgType,
}

impl FlowKey {
    pub fn of(pkt: &Packet) -> Self {
        FlowKey {
            src: pkt.src,
            dst: pkt.dst,
            msg_type: pkt.msg_type,
        }
    }
}

impl std::fmt::Display for FlowKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}>{}:{}", self.src, self.dst, self.msg_type.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowMatch {
    pub src: Option<NodeId>,
    pub dst: Option<NodeId>,
    pub msg_type: Option<MsgType>,
}

impl FlowMatch {
    pub fn exact(src: NodeId, dst: NodeId, msg_type: MsgType) -> Self {
        FlowMatch {
            src: Some(src),
            dst: Some(dst),
            msg_type: Some(msg_type),
        }
    }

    pub fn from_src(src: NodeId) -> Self {
        FlowMatch {
            src: Some(src),
            ..Default::default()
        }
    }

    pub fn matches_key(&self, key: &FlowKey) -> bool {
        self.src.is_none_or(|s| s == key.src)
            && self.dst.is_none_or(|d| d == key.dst)
            && self.msg_type.is_none_or(|t| t == key.msg_type)
    }

    pub fn is_all_wildcard(&self) -> bool {
        self.src.is_none() && self.dst.is_none() && self.msg_type.is_none()
    }

    pub fn matches(&self, pkt: &Packet) -> bool {
        self.matches_key(&FlowKey::of(pkt))
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.src.map_or(WILDCARD_NODE, |n| n.0).to_be_bytes());
        out.extend_from_slice(&self.dst.map_or(WILDCARD_NODE, |n| n.0).to_be_bytes());
        out.push(self.msg_type.map_or(WILDCARD_TYPE, MsgType::code));
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let node = |v: u32| (v != WILDCARD_NODE).then_some(NodeId(v));
        let src = node(r.u32()?);
        let dst = node(r.u32()?);
        let t = r.u8()?;
        let msg_type = if t == WILDCARD_TYPE {
            None
        } else {
            Some(MsgType::from_code(t).ok_or(WireError::Field("msg_type"))?)
        };
        Ok(FlowMatch { src, dst, msg_type })
    }
}

impl std::fmt::Display for FlowMatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = |v: Option<NodeId>| v.map_or("*".to_string(), |n| n.to_string());
        write!(
            f,
            "{}>{}:{}",
            n(self.src),
            n(self.dst),
            self.msg_type.map_or("*", MsgType::name)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Forward(Port),
    Drop,
    ToController,
}

impl Action {
    fn code(self) -> (u8, u16) {
        match self {
            Action::Forward(p) => (0, p),
            Action::Drop => (1, 0),
            Action::ToController => (2, 0),
        }
    }

    fn from_code(c: u8, port: u16) -> Result<Self, WireError> {
        match c {
            0 => Ok(Action::Forward(port)),
            1 => Ok(Action::Drop),
            2 => Ok(Action::ToController),
            _ => Err(WireError::Field("action")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowModOp {
    Add,
    Delete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowMod {
    pub op: FlowModOp,
    pub priority: u16,
    pub matcher: FlowMatch,
    pub action: Action,
}

impl FlowMod {
    pub fn add(priority: u16, matcher: FlowMatch, action: Action) -> Self {
        FlowMod {
            op: FlowModOp::Add,
            priority,
            matcher,
            action,
        }
    }

    pub fn delete(matcher: FlowMatch) -> Self {
        FlowMod {
            op: FlowModOp::Delete,
            priority: 0,
            matcher,
            action: Action::Drop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StatsEntry {
    pub matcher: FlowMatch,
    pub packets: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Hello { node: NodeId },
    /// `pubkey` is a point encoding; its width depends on the curve.
    JoinRequest { node: NodeId, pubkey: Vec<u8> },
    PacketIn { in_port: Port, frame: Vec<u8> },
    PacketOut { out_port: Port, frame: Vec<u8> },
    FlowMod(FlowMod),
    StatsReport { entries: Vec<StatsEntry> },
    Revoke { nodes: Vec<NodeId> },
    Data(Packet),
}

impl Message {
    pub fn kind_code(&self) -> u8 {
        match self {
            Message::Hello { .. } => 0x01,
            Message::JoinRequest { .. } => 0x02,
            Message::PacketIn { .. } => 0x03,
            Message::PacketOut { .. } => 0x04,
            Message::FlowMod(_) => 0x05,
            Message::StatsReport { .. } => 0x06,
            Message::Revoke { .. } => 0x07,
            Message::Data(_) => DATA_KIND,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::JoinRequest { .. } => "join_request",
            Message::PacketIn { .. } => "packet_in",
            Message::PacketOut { .. } => "packet_out",
            Message::FlowMod(_) => "flow_mod",
            Message::StatsReport { .. } => "stats_report",
            Message::Revoke { .. } => "revoke",
            Message::Data(_) => "data",
        }
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut body = Vec::new();
    match msg {
        Message::Hello { node } => body.extend_from_slice(&node.0.to_be_bytes()),
        Message::JoinRequest { node, pubkey } => {
            body.extend_from_slice(&node.0.to_be_bytes());
            body.extend_from_slice(pubkey);
        }
        Message::PacketIn { in_port: port, frame } | Message::PacketOut { out_port: port, frame } => {
            body.extend_from_slice(&port.to_be_bytes());
            body.extend_from_slice(frame);
        }
        Message::FlowMod(m) => {
            body.push(match m.op {
                FlowModOp::Add => 0,
                FlowModOp::Delete => 1,
            });
            body.extend_from_slice(&m.priority.to_be_bytes());
            m.matcher.encode(&mut body);
            let (code, port) = m.action.code();
            body.push(code);
            body.extend_from_slice(&port.to_be_bytes());
        }
        Message::StatsReport { entries } => {
            let n = u16::try_from(entries.len()).map_err(|_| WireError::TooLong(entries.len()))?;
            body.extend_from_slice(&n.to_be_bytes());
            for e in entries {
                e.matcher.encode(&mut body);
                body.extend_from_slice(&e.packets.to_be_bytes());
                body.extend_from_slice(&e.bytes.to_be_bytes());
            }
        }
        Message::Revoke { nodes } => {
            let n = u16::try_from(nodes.len()).map_err(|_| WireError::TooLong(nodes.len()))?;
            body.extend_from_slice(&n.to_be_bytes());
            for node in nodes {
                body.extend_from_slice(&node.0.to_be_bytes());
            }
        }
        Message::Data(p) => {
            body.extend_from_slice(&p.src.0.to_be_bytes());
            body.extend_from_slice(&p.dst.0.to_be_bytes());
            body.push(p.msg_type.code());
            body.extend_from_slice(&p.payload);
        }
    }
    let len = u16::try_from(body.len()).map_err(|_| WireError::TooLong(body.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.push(msg.kind_code());
    out.extend_from_slice(&len.to_be_bytes());
    out.push(VERSION);
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes a frame that must contain exactly one message.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(WireError::Length);
    }
    Ok(msg)
}

/// Decodes one message from the start of `bytes`, returning it with the
/// number of bytes consumed. Any trailer is left to the caller.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated);
    }
    let kind = bytes[0];
    let len = u16::from_be_bytes([bytes[1], bytes[2]]) as usize;
    if bytes[3] != VERSION {
        return Err(WireError::Version(bytes[3]));
    }
    let body = bytes
        .get(HEADER_LEN..HEADER_LEN + len)
        .ok_or(WireError::Truncated)?;
    let mut r = Reader { buf: body, pos: 0 };
    let msg = match kind {
        0x01 => Message::Hello {
            node: NodeId(r.u32()?),
        },
        0x02 => Message::JoinRequest {
            node: NodeId(r.u32()?),
            pubkey: r.rest().to_vec(),
        },
        0x03 => Message::PacketIn {
            in_port: r.u16()?,
            frame: r.rest().to_vec(),
        },
        0x04 => Message::PacketOut {
            out_port: r.u16()?,
            frame: r.rest().to_vec(),
        },
        0x05 => {
            let op = match r.u8()? {
                0 => FlowModOp::Add,
                1 => FlowModOp::Delete,
                _ => return Err(WireError::Field("op")),
            };
            let priority = r.u16()?;
            let matcher = FlowMatch::decode(&mut r)?;
            let code = r.u8()?;
            let port = r.u16()?;
            Message::FlowMod(FlowMod {
                op,
                priority,
                matcher,
                action: Action::from_code(code, port)?,
            })
        }
        0x06 => {
            let n = r.u16()?;
            let mut entries = Vec::with_capacity(n as usize);
            for _ in 0..n {
                entries.push(StatsEntry {
                    matcher: FlowMatch::decode(&mut r)?,
                    packets: r.u64()?,
                    bytes: r.u64()?,
                });
            }
            Message::StatsReport { entries }
        }
        0x07 => {
            let n = r.u16()?;
            let nodes = (0..n).map(|_| r.u32().map(NodeId)).collect::<Result<_, _>>()?;
            Message::Revoke { nodes }
        }
        0x08 => {
            let src = NodeId(r.u32()?);
            let dst = NodeId(r.u32()?);
            let msg_type = MsgType::from_code(r.u8()?).ok_or(WireError::Field("msg_type"))?;
            Message::Data(Packet {
                src,
                dst,
                msg_type,
                payload: r.rest().to_vec(),
            })
        }
        k => return Err(WireError::UnknownKind(k)),
    };
    if r.pos != body.len() {
        return Err(WireError::Length);
    }
    Ok((msg, HEADER_LEN + len))
}

/// Big-endian cursor over a byte slice.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or(WireError::Truncated)?;
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::Length)
        }
    }
}
