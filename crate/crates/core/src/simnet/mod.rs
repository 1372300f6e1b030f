//! Deterministic discrete-event simulation of the clustered IoT network.
//!
//! Time is an integer tick. Every send is resolved into exactly one deliver
//! or drop event `delay` ticks later; events are processed in
//! `(tick, insertion order)`. All randomness comes from per-node ChaCha
//! streams derived from the run seed, so identical inputs give identical
//! logs.

mod adversary;
mod topology;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adversary::{AdversaryAction, AdversaryScript, FrameFilter, TapRecord};
pub use topology::{NodeId, NodeRole, Port, Topology, TopologySpec, UPLINK_PORT};

pub type Tick = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no link {0} -> {1}")]
    NoLink(NodeId, NodeId),
}

/// Independent random streams derived per node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Loss = 0,
    Traffic = 1,
    Crypto = 2,
    Adversary = 3,
    Behavior = 4,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one node's stream: `splitmix(seed ^ splitmix(node << 8 | stream))`.
pub fn derive_seed(seed: u64, node: NodeId, stream: Stream) -> u64 {
    splitmix64(seed ^ splitmix64(((node.0 as u64) << 8) | stream as u64))
}

pub fn stream_rng(seed: u64, node: NodeId, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, node, stream))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Deliver,
    Drop,
    Timer,
    Adversary,
}

impl EventKind {
    fn as_str(&self) -> &'static str {
        match self {
            EventKind::Deliver => "deliver",
            EventKind::Drop => "drop",
            EventKind::Timer => "timer",
            EventKind::Adversary => "adversary",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub tick: Tick,
    pub kind: EventKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Vec<u8>,
    /// Tick at which the frame entered the link; equals `tick` for timers.
    pub sent_at: Tick,
    /// Frame id for deliver/drop, timer tag for timers, action index for
    /// adversary events.
    pub tag: u64,
}

impl SimEvent {
    pub fn render(&self, out: &mut String) {
        let _ = write!(
            out,
            "{} {} {} {} {} {} ",
            self.tick,
            self.kind.as_str(),
            self.src,
            self.dst,
            self.sent_at,
            self.tag
        );
        for b in &self.payload {
            let _ = write!(out, "{b:02x}");
        }
        out.push('\n');
    }
}

/// Append-only event log.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<SimEvent>,
}

impl EventLog {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = String::new();
        for e in &self.events {
            e.render(&mut s);
        }
        s.into_bytes()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug)]
enum Pending {
    Arrival {
        src: NodeId,
        dst: NodeId,
        payload: Vec<u8>,
        sent_at: Tick,
        frame: u64,
        lost: bool,
    },
    Timer {
        node: NodeId,
        tag: u64,
    },
    Adversary {
        action: usize,
    },
}

#[derive(Debug)]
struct Queued {
    tick: Tick,
    seq: u64,
    item: Pending,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.seq) == (other.tick, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.tick, self.seq).cmp(&(other.tick, other.seq))
    }
}

pub struct Network {
    spec: TopologySpec,
    topology: Topology,
    delay: Tick,
    now: Tick,
    seq: u64,
    next_frame: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    log: EventLog,
    loss_rngs: BTreeMap<NodeId, ChaCha8Rng>,
    links: BTreeMap<(NodeId, NodeId), LinkStats>,
    adversary: adversary::AdversaryState,
}

impl Network {
    /// Builds the topology: one gateway, one head per cluster and
    /// `clusters × devices_per_cluster` devices.
    pub fn build_topology(spec: &TopologySpec) -> Result<Self, SimError> {
        let topology = Topology::build(spec)?;
        let loss_rngs = topology
            .nodes()
            .map(|n| (n, stream_rng(spec.seed, n, Stream::Loss)))
            .collect();
        Ok(Network {
            spec: spec.clone(),
            topology,
            delay: 1,
            now: 0,
            seq: 0,
            next_frame: 0,
            queue: BinaryHeap::new(),
            log: EventLog::default(),
            loss_rngs,
            links: BTreeMap::new(),
            adversary: adversary::AdversaryState::new(spec.seed),
        })
    }

    /// Per-hop delay in ticks; must be at least one.
    pub fn with_delay(mut self, delay: Tick) -> Self {
        self.delay = delay.max(1);
        self
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn delay(&self) -> Tick {
        self.delay
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn link_stats(&self) -> &BTreeMap<(NodeId, NodeId), LinkStats> {
        &self.links
    }

    pub fn transcript(&self) -> &[TapRecord] {
        self.adversary.transcript()
    }

    fn push(&mut self, tick: Tick, item: Pending) {
        self.seq += 1;
        self.queue.push(Reverse(Queued {
            tick,
            seq: self.seq,
            item,
        }));
    }

    /// Puts `payload` on the direct link `src -> dst` at the current tick.
    /// Loss is decided now from the sender's loss stream; the outcome is
    /// logged on arrival.
    pub fn send(&mut self, src: NodeId, dst: NodeId, payload: Vec<u8>) -> Result<u64, SimError> {
        if !self.topology.has_link(src, dst) {
            return Err(SimError::NoLink(src, dst));
        }
        let roll: f64 = self
            .loss_rngs
            .get_mut(&src)
            .expect("every node has a loss stream")
            .gen();
        let lost = roll < self.spec.link_loss_rate;
        let now = self.now;
        let payload = self.adversary.on_transmit(now, src, dst, payload, &mut self.log);
        Ok(self.enqueue_arrival(src, dst, payload, now, now + self.delay, lost))
    }

    fn enqueue_arrival(
        &mut self,
        src: NodeId,
        dst: NodeId,
        payload: Vec<u8>,
        sent_at: Tick,
        at: Tick,
        lost: bool,
    ) -> u64 {
        self.next_frame += 1;
        let frame = self.next_frame;
        self.links.entry((src, dst)).or_default().sent += 1;
        self.push(
            at,
            Pending::Arrival {
                src,
                dst,
                payload,
                sent_at,
                frame,
                lost,
            },
        );
        frame
    }

    pub fn schedule_timer(&mut self, node: NodeId, at: Tick, tag: u64) {
        self.push(at.max(self.now), Pending::Timer { node, tag });
    }

    /// Validates the script against the topology and schedules its events.
    pub fn attach_adversary(&mut self, script: AdversaryScript) -> Result<(), SimError> {
        for action in &script.actions {
            action.validate(&self.topology)?;
        }
        for action in script.actions {
            let (idx, wakeups) = self.adversary.install(action);
            for t in wakeups {
                self.push(t, Pending::Adversary { action: idx });
            }
        }
        Ok(())
    }

    /// Processes every event with tick <= `tick`; returns the newly
    /// appended slice of the log. Calling it again with the same tick
    /// returns an empty delta.
    pub fn run_until(&mut self, tick: Tick) -> Vec<SimEvent> {
        let start = self.log.events.len();
        if tick < self.now {
            return Vec::new();
        }
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.tick > tick {
                break;
            }
            let Reverse(q) = self.queue.pop().expect("peeked");
            self.now = q.tick;
            match q.item {
                Pending::Arrival {
                    src,
                    dst,
                    payload,
                    sent_at,
                    frame,
                    lost,
                } => {
                    let stats = self.links.entry((src, dst)).or_default();
                    let kind = if lost {
                        stats.dropped += 1;
                        EventKind::Drop
                    } else {
                        stats.delivered += 1;
                        EventKind::Deliver
                    };
                    self.log.events.push(SimEvent {
                        tick: q.tick,
                        kind,
                        src,
                        dst,
                        payload,
                        sent_at,
                        tag: frame,
                    });
                }
                Pending::Timer { node, tag } => self.log.events.push(SimEvent {
                    tick: q.tick,
                    kind: EventKind::Timer,
                    src: node,
                    dst: node,
                    payload: Vec::new(),
                    sent_at: q.tick,
                    tag,
                }),
                Pending::Adversary { action } => {
                    let effects = self.adversary.fire(action, q.tick, &mut self.log);
                    for e in effects {
                        let at = e.at.unwrap_or(q.tick + self.delay);
                        self.enqueue_arrival(e.src, e.dst, e.payload, e.sent_at, at, false);
                    }
                }
            }
        }
        self.now = tick;
        self.log.events[start..].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(loss: f64, seed: u64) -> Network {
        Network::build_topology(&TopologySpec {
            clusters: 2,
            devices_per_cluster: 3,
            link_loss_rate: loss,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn deliver_after_one_tick() {
        let mut n = net(0.0, 1);
        n.send(NodeId(3), NodeId(1), vec![1, 2, 3]).unwrap();
        assert!(n.run_until(0).is_empty());
        let ev = n.run_until(1);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::Deliver);
        assert_eq!(ev[0].payload, vec![1, 2, 3]);
        assert_eq!(ev[0].sent_at, 0);
        assert!(n.run_until(1).is_empty(), "second call is an empty delta");
    }

    #[test]
    fn missing_link_is_error() {
        let mut n = net(0.0, 1);
        assert_eq!(
            n.send(NodeId(3), NodeId::GATEWAY, vec![]),
            Err(SimError::NoLink(NodeId(3), NodeId::GATEWAY))
        );
    }

    #[test]
    fn full_loss_drops_everything() {
        let mut n = net(1.0, 9);
        for _ in 0..50 {
            n.send(NodeId(3), NodeId(1), vec![0]).unwrap();
        }
        n.run_until(5);
        assert_eq!(n.log().count(EventKind::Deliver), 0);
        assert_eq!(n.log().count(EventKind::Drop), 50);
    }

    #[test]
    fn timers_fire_in_order() {
        let mut n = net(0.0, 1);
        n.schedule_timer(NodeId(4), 7, 2);
        n.schedule_timer(NodeId(3), 7, 1);
        n.schedule_timer(NodeId(3), 3, 0);
        let ev = n.run_until(10);
        let tags: Vec<u64> = ev.iter().map(|e| e.tag).collect();
        assert_eq!(tags, vec![0, 2, 1]);
        assert!(ev.iter().all(|e| e.kind == EventKind::Timer));
    }

    #[test]
    fn stream_seeds_differ_per_node_and_stream() {
        let a = derive_seed(5, NodeId(1), Stream::Loss);
        let b = derive_seed(5, NodeId(2), Stream::Loss);
        let c = derive_seed(5, NodeId(1), Stream::Traffic);
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn tap_sees_every_frame_on_link() {
        let mut n = net(0.0, 2);
        n.attach_adversary(AdversaryScript::new(vec![AdversaryAction::Tap {
            src: NodeId(3),
            dst: NodeId(1),
        }]))
        .unwrap();
        for i in 0..10u8 {
            n.send(NodeId(3), NodeId(1), vec![i]).unwrap();
            n.send(NodeId(4), NodeId(1), vec![100 + i]).unwrap();
        }
        n.run_until(3);
        let seen: Vec<u8> = n.transcript().iter().map(|r| r.payload[0]).collect();
        assert_eq!(seen, (0..10).collect::<Vec<u8>>());
    }

    #[test]
    fn zero_rate_flood_is_silent() {
        let mut n = net(0.0, 2);
        n.attach_adversary(AdversaryScript::new(vec![AdversaryAction::Flood {
            src: NodeId(3),
            dst: NodeId(1),
            start: 0,
            end: 100,
            per_tick: 0,
            frame: vec![1],
        }]))
        .unwrap();
        n.run_until(200);
        assert!(n.log().events.is_empty());
    }

    #[test]
    fn replay_delivers_duplicate_at_requested_tick() {
        let mut n = net(0.0, 2);
        n.attach_adversary(AdversaryScript::new(vec![AdversaryAction::Replay {
            src: NodeId(3),
            dst: NodeId(1),
            nth: 1,
            at: 40,
            filter: FrameFilter::any(),
        }]))
        .unwrap();
        for i in 0..3u8 {
            n.send(NodeId(3), NodeId(1), vec![i, 9]).unwrap();
            n.run_until(n.now() + 5);
        }
        n.run_until(50);
        let delivered: Vec<(Tick, Vec<u8>)> = n
            .log()
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Deliver)
            .map(|e| (e.tick, e.payload.clone()))
            .collect();
        assert!(delivered.contains(&(40, vec![1, 9])));
        assert_eq!(delivered.iter().filter(|(_, p)| p == &vec![1, 9]).count(), 2);
    }

    #[test]
    fn unknown_node_in_script_is_config_error() {
        let mut n = net(0.0, 2);
        let err = n
            .attach_adversary(AdversaryScript::new(vec![AdversaryAction::Tap {
                src: NodeId(77),
                dst: NodeId(1),
            }]))
            .unwrap_err();
        assert!(matches!(err, SimError::Config(_)));
    }

    #[test]
    fn flip_changes_exactly_one_bit() {
        let mut n = net(0.0, 2);
        n.attach_adversary(AdversaryScript::new(vec![AdversaryAction::Flip {
            src: NodeId(3),
            dst: NodeId(1),
            from: 0,
            count: 1,
            tail: 4,
            filter: FrameFilter::any(),
        }]))
        .unwrap();
        let original = vec![0u8; 16];
        n.send(NodeId(3), NodeId(1), original.clone()).unwrap();
        n.send(NodeId(3), NodeId(1), original.clone()).unwrap();
        let ev: Vec<SimEvent> = n.run_until(1).into_iter().filter(|e| e.kind == EventKind::Deliver).collect();
        let diff: u32 = ev[0].payload.iter().map(|b| b.count_ones()).sum();
        assert_eq!(diff, 1);
        assert!(ev[0].payload[..12].iter().all(|b| *b == 0));
        assert_eq!(ev[1].payload, original);
    }
}
