use thiserror::Error;

use super::wire::{Action, FlowMatch, FlowMod, FlowModOp, Packet, StatsEntry};

pub const DEFAULT_CAPACITY: usize = 64;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum TableError {
    #[error("priority {0} already in use")]
    DuplicatePriority(u16),
    #[error("table full")]
    Full,
    #[error("no entry with that match")]
    NoSuchEntry,
    #[error("installed entries need at least one concrete field")]
    AllWildcard,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowEntry {
    pub matcher: FlowMatch,
    pub priority: u16,
    pub action: Action,
    pub packets: u64,
    pub bytes: u64,
}

/// Single flow table of a cluster head. Entries are kept sorted by
/// descending priority, and priorities are unique.
#[derive(Clone, Debug)]
pub struct FlowTable {
    entries: Vec<FlowEntry>,
    capacity: usize,
    misses: u64,
    offered: u64,
}

impl Default for FlowTable {
    fn default() -> Self {
        FlowTable::with_capacity(DEFAULT_CAPACITY)
    }
}

impl FlowTable {
    pub fn with_capacity(capacity: usize) -> Self {
        FlowTable {
            entries: Vec::new(),
            capacity,
            misses: 0,
            offered: 0,
        }
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn apply(&mut self, m: &FlowMod) -> Result<(), TableError> {
        match m.op {
            FlowModOp::Add => {
                if m.matcher.is_all_wildcard() {
                    return Err(TableError::AllWildcard);
                }
                if self.entries.iter().any(|e| e.priority == m.priority) {
                    return Err(TableError::DuplicatePriority(m.priority));
                }
                if self.entries.len() >= self.capacity {
                    return Err(TableError::Full);
                }
                let at = self.entries.partition_point(|e| e.priority > m.priority);
                self.entries.insert(
                    at,
                    FlowEntry {
                        matcher: m.matcher,
                        priority: m.priority,
                        action: m.action,
                        packets: 0,
                        bytes: 0,
                    },
                );
                Ok(())
            }
            FlowModOp::Delete => {
                let before = self.entries.len();
                self.entries.retain(|e| e.matcher != m.matcher);
                if self.entries.len() == before {
                    Err(TableError::NoSuchEntry)
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Action of the highest-priority matching entry, or `ToController` on
    /// a table miss. Updates counters either way.
    pub fn match_packet(&mut self, pkt: &Packet) -> Action {
        self.offered += 1;
        match self.entries.iter_mut().find(|e| e.matcher.matches(pkt)) {
            Some(e) => {
                e.packets += 1;
                e.bytes += pkt.wire_len();
                e.action
            }
            None => {
                self.misses += 1;
                Action::ToController
            }
        }
    }

    pub fn stats(&self) -> Vec<StatsEntry> {
        self.entries
            .iter()
            .map(|e| StatsEntry {
                matcher: e.matcher,
                packets: e.packets,
                bytes: e.bytes,
            })
            .collect()
    }
}
