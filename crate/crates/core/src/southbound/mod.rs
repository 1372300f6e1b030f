//! Lightweight OpenFlow-like protocol between the gateway and the cluster
//! heads, and the flow table each head runs.

mod table;
mod wire;

pub use table::{FlowEntry, FlowTable, TableError, DEFAULT_CAPACITY};
pub use wire::{
    decode, decode_prefix, encode, Action, FlowKey, FlowMatch, FlowMod, FlowModOp, Message, MsgType, Packet,
    Reader, StatsEntry, WireError, DATA_KIND, HEADER_LEN, VERSION,
};
