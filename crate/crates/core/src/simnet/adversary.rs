use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{stream_rng, EventKind, EventLog, NodeId, SimError, SimEvent, Stream, Tick, Topology};

/// Bytes a frame must carry at given offsets for an action to touch it.
/// An empty filter matches every frame.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameFilter {
    pub bytes: Vec<(usize, u8)>,
}

impl FrameFilter {
    pub fn any() -> Self {
        FrameFilter::default()
    }

    pub fn new(bytes: Vec<(usize, u8)>) -> Self {
        FrameFilter { bytes }
    }

    pub fn matches(&self, frame: &[u8]) -> bool {
        self.bytes.iter().all(|(i, b)| frame.get(*i) == Some(b))
    }
}

/// One scripted adversary capability. Link actions name a directed link
/// `src -> dst`; `filter` restricts them to some frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AdversaryAction {
    /// Copies every frame on the link into the transcript.
    Tap { src: NodeId, dst: NodeId },
    /// Flips one random bit within the last `tail` bytes of up to `count`
    /// matching frames sent at or after `from`.
    Flip {
        src: NodeId,
        dst: NodeId,
        from: Tick,
        count: u32,
        tail: usize,
        filter: FrameFilter,
    },
    /// Overwrites bytes starting `offset_from_end` bytes before the end of
    /// up to `count` matching frames sent at or after `from`.
    Rewrite {
        src: NodeId,
        dst: NodeId,
        from: Tick,
        count: u32,
        offset_from_end: usize,
        bytes: Vec<u8>,
        filter: FrameFilter,
    },
    /// Re-delivers the `nth` (0-based) matching frame seen on the link so
    /// that it arrives exactly at tick `at`.
    Replay {
        src: NodeId,
        dst: NodeId,
        nth: usize,
        at: Tick,
        filter: FrameFilter,
    },
    /// Puts a forged frame on the link at tick `at`.
    Inject {
        src: NodeId,
        dst: NodeId,
        at: Tick,
        frame: Vec<u8>,
    },
    /// Sends `per_tick` copies of `frame` on each tick in `[start, end)`.
    Flood {
        src: NodeId,
        dst: NodeId,
        start: Tick,
        end: Tick,
        per_tick: u32,
        frame: Vec<u8>,
    },
}

impl AdversaryAction {
    pub fn link(&self) -> (NodeId, NodeId) {
        match self {
            AdversaryAction::Tap { src, dst }
            | AdversaryAction::Flip { src, dst, .. }
            | AdversaryAction::Rewrite { src, dst, .. }
            | AdversaryAction::Replay { src, dst, .. }
            | AdversaryAction::Inject { src, dst, .. }
            | AdversaryAction::Flood { src, dst, .. } => (*src, *dst),
        }
    }

    pub(super) fn validate(&self, topo: &Topology) -> Result<(), SimError> {
        let (src, dst) = self.link();
        for n in [src, dst] {
            if !topo.contains(n) {
                return Err(SimError::Config(format!("adversary references unknown node {n}")));
            }
        }
        if !topo.has_link(src, dst) {
            return Err(SimError::Config(format!(
                "adversary references missing link {src} -> {dst}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdversaryScript {
    pub actions: Vec<AdversaryAction>,
}

impl AdversaryScript {
    pub fn new(actions: Vec<AdversaryAction>) -> Self {
        AdversaryScript { actions }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapRecord {
    pub tick: Tick,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Vec<u8>,
}

pub(super) struct Effect {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Vec<u8>,
    pub sent_at: Tick,
    /// Exact arrival tick; `None` means the normal link delay.
    pub at: Option<Tick>,
}

pub(super) struct AdversaryState {
    actions: Vec<AdversaryAction>,
    altered: Vec<u32>,
    seen: BTreeMap<usize, Vec<Vec<u8>>>,
    transcript: Vec<TapRecord>,
    rng: ChaCha8Rng,
}

impl AdversaryState {
    pub fn new(seed: u64) -> Self {
        AdversaryState {
            actions: Vec::new(),
            altered: Vec::new(),
            seen: BTreeMap::new(),
            transcript: Vec::new(),
            rng: stream_rng(seed, NodeId(u32::MAX), Stream::Adversary),
        }
    }

    pub fn transcript(&self) -> &[TapRecord] {
        &self.transcript
    }

    /// Registers an action; returns its index and the ticks at which it
    /// must be woken.
    pub fn install(&mut self, action: AdversaryAction) -> (usize, Vec<Tick>) {
        let wakeups = match &action {
            AdversaryAction::Replay { at, .. } | AdversaryAction::Inject { at, .. } => vec![*at],
            AdversaryAction::Flood {
                start,
                end,
                per_tick,
                ..
            } if *per_tick > 0 => (*start..*end).collect(),
            _ => Vec::new(),
        };
        self.actions.push(action);
        self.altered.push(0);
        (self.actions.len() - 1, wakeups)
    }

    /// Applies on-path actions to a frame entering the link.
    pub fn on_transmit(
        &mut self,
        now: Tick,
        src: NodeId,
        dst: NodeId,
        mut payload: Vec<u8>,
        log: &mut EventLog,
    ) -> Vec<u8> {
        for idx in 0..self.actions.len() {
            if self.actions[idx].link() != (src, dst) {
                continue;
            }
            match &self.actions[idx] {
                AdversaryAction::Tap { .. } => self.transcript.push(TapRecord {
                    tick: now,
                    src,
                    dst,
                    payload: payload.clone(),
                }),
                AdversaryAction::Flip {
                    from,
                    count,
                    tail,
                    filter,
                    ..
                } => {
                    if now >= *from
                        && self.altered[idx] < *count
                        && filter.matches(&payload)
                        && !payload.is_empty()
                    {
                        let span = (*tail).clamp(1, payload.len());
                        let byte = payload.len() - 1 - self.rng.gen_range(0..span);
                        let bit = self.rng.gen_range(0..8u8);
                        payload[byte] ^= 1 << bit;
                        self.altered[idx] += 1;
                        log_adversary(log, now, src, dst, idx, vec![byte as u8, bit]);
                    }
                }
                AdversaryAction::Rewrite {
                    from,
                    count,
                    offset_from_end,
                    bytes,
                    filter,
                    ..
                } => {
                    if now >= *from
                        && self.altered[idx] < *count
                        && filter.matches(&payload)
                        && *offset_from_end <= payload.len()
                    {
                        let start = payload.len() - offset_from_end;
                        for (i, b) in bytes.iter().enumerate() {
                            if let Some(slot) = payload.get_mut(start + i) {
                                *slot = *b;
                            }
                        }
                        self.altered[idx] += 1;
                        log_adversary(log, now, src, dst, idx, bytes.clone());
                    }
                }
                AdversaryAction::Replay { filter, .. } => {
                    if filter.matches(&payload) {
                        self.seen.entry(idx).or_default().push(payload.clone());
                    }
                }
                AdversaryAction::Inject { .. } | AdversaryAction::Flood { .. } => {}
            }
        }
        payload
    }

    /// Runs a scheduled action at `now`, returning the frames it puts on
    /// the wire.
    pub fn fire(&mut self, idx: usize, now: Tick, log: &mut EventLog) -> Vec<Effect> {
        match &self.actions[idx] {
            AdversaryAction::Replay {
                src, dst, nth, at, ..
            } => {
                let (src, dst, at) = (*src, *dst, *at);
                let frame = self.seen.get(&idx).and_then(|v| v.get(*nth)).cloned();
                match frame {
                    Some(f) => {
                        log_adversary(log, now, src, dst, idx, f.clone());
                        vec![Effect {
                            src,
                            dst,
                            payload: f,
                            sent_at: now,
                            at: Some(at),
                        }]
                    }
                    None => {
                        log_adversary(log, now, src, dst, idx, Vec::new());
                        Vec::new()
                    }
                }
            }
            AdversaryAction::Inject { src, dst, frame, .. } => {
                log_adversary(log, now, *src, *dst, idx, frame.clone());
                vec![Effect {
                    src: *src,
                    dst: *dst,
                    payload: frame.clone(),
                    sent_at: now,
                    at: None,
                }]
            }
            AdversaryAction::Flood {
                src,
                dst,
                per_tick,
                frame,
                ..
            } => {
                log_adversary(log, now, *src, *dst, idx, Vec::new());
                (0..*per_tick)
                    .map(|_| Effect {
                        src: *src,
                        dst: *dst,
                        payload: frame.clone(),
                        sent_at: now,
                        at: None,
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

fn log_adversary(log: &mut EventLog, tick: Tick, src: NodeId, dst: NodeId, idx: usize, payload: Vec<u8>) {
    log.events.push(SimEvent {
        tick,
        kind: EventKind::Adversary,
        src,
        dst,
        payload,
        sent_at: tick,
        tag: idx as u64,
    });
}
