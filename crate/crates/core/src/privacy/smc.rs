use rand::Rng;

use super::PrivacyError;
use crate::simnet::NodeId;

/// Mersenne prime 2^61 - 1. Leaves room for 2^32 devices reporting values
/// below 2^28 before any sum wraps.
pub const SMC_MODULUS: u64 = (1 << 61) - 1;
pub const DEFAULT_AGGREGATORS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmcShareSet {
    pub owner: NodeId,
    pub shares: Vec<u64>,
}

impl SmcShareSet {
    pub fn aggregator_count(&self) -> usize {
        self.shares.len()
    }

    pub fn reconstruct(&self, q: u64) -> u64 {
        self.shares.iter().fold(0, |acc, s| add_mod(acc, *s, q))
    }
}

pub fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 + b as u128) % q as u128) as u64
}

pub fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 + q as u128 - (b % q) as u128) % q as u128) as u64
}

/// `m - 1` uniform shares plus one balancing share so that the sum is
/// `value mod q`.
pub fn smc_split<R: Rng + ?Sized>(
    owner: NodeId,
    value: u64,
    m: usize,
    q: u64,
    rng: &mut R,
) -> Result<SmcShareSet, PrivacyError> {
    if m < 2 {
        return Err(PrivacyError::AggregatorCount(m));
    }
    if value >= q {
        return Err(PrivacyError::OutOfRange(value));
    }
    let mut shares: Vec<u64> = (0..m - 1).map(|_| rng.gen_range(0..q)).collect();
    let partial = shares.iter().fold(0, |acc, s| add_mod(acc, *s, q));
    shares.push(sub_mod(value, partial, q));
    Ok(SmcShareSet { owner, shares })
}

/// The unique last share that makes `known ∪ {share}` sum to `target`.
pub fn completion(known: &[u64], target: u64, q: u64) -> u64 {
    let partial = known.iter().fold(0, |acc, s| add_mod(acc, *s, q));
    sub_mod(target, partial, q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregateMode {
    Sum,
    Mean,
    Count,
}

impl AggregateMode {
    pub fn name(self) -> &'static str {
        match self {
            AggregateMode::Sum => "sum",
            AggregateMode::Mean => "mean",
            AggregateMode::Count => "count",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [AggregateMode::Sum, AggregateMode::Mean, AggregateMode::Count]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateResult {
    pub mode: AggregateMode,
    pub sum: u64,
    pub count: u64,
}

impl AggregateResult {
    pub fn value(&self) -> f64 {
        match self.mode {
            AggregateMode::Sum => self.sum as f64,
            AggregateMode::Count => self.count as f64,
            AggregateMode::Mean if self.count == 0 => 0.0,
            AggregateMode::Mean => self.sum as f64 / self.count as f64,
        }
    }
}

/// Adds the per-aggregator subtotals. Any missing subtotal aborts with no
/// partial result.
pub fn smc_combine(
    subtotals: &[Option<u64>],
    q: u64,
    mode: AggregateMode,
    device_count: u64,
) -> Result<AggregateResult, PrivacyError> {
    if subtotals.len() < 2 {
        return Err(PrivacyError::AggregatorCount(subtotals.len()));
    }
    let mut sum = 0;
    for (i, s) in subtotals.iter().enumerate() {
        sum = add_mod(sum, s.ok_or(PrivacyError::MissingShare(i))?, q);
    }
    Ok(AggregateResult {
        mode,
        sum,
        count: device_count,
    })
}

/// The `m` logical aggregators of one collection round. Aggregator `i`
/// only ever sees share `i` of each input.
#[derive(Clone, Debug)]
pub struct AggregatorSet {
    q: u64,
    subtotals: Vec<Option<u64>>,
    contributors: Vec<NodeId>,
}

impl AggregatorSet {
    pub fn new(m: usize, q: u64) -> Self {
        AggregatorSet {
            q,
            subtotals: vec![Some(0); m],
            contributors: Vec::new(),
        }
    }

    pub fn accept(&mut self, set: &SmcShareSet) -> Result<(), PrivacyError> {
        if set.shares.len() != self.subtotals.len() {
            return Err(PrivacyError::AggregatorCount(set.shares.len()));
        }
        for (slot, share) in self.subtotals.iter_mut().zip(&set.shares) {
            if let Some(t) = slot {
                *t = add_mod(*t, *share, self.q);
            }
        }
        self.contributors.push(set.owner);
        Ok(())
    }

    /// Simulates an aggregator dropping out before the round closes.
    pub fn withhold(&mut self, index: usize) {
        if let Some(s) = self.subtotals.get_mut(index) {
            *s = None;
        }
    }

    pub fn contributors(&self) -> &[NodeId] {
        &self.contributors
    }

    pub fn combine(&self, mode: AggregateMode) -> Result<AggregateResult, PrivacyError> {
        smc_combine(&self.subtotals, self.q, mode, self.contributors.len() as u64)
    }
}
