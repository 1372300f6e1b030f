//! Reading confidentiality and integrity (hybrid ECDH encryption plus a
//! Schnorr signature) and additive-share aggregation so that collection
//! reveals only the aggregate.

mod cipher;
mod smc;

use thiserror::Error;

use crate::ecc::EccError;
use crate::simnet::NodeId;
use crate::southbound::Reader;

pub use cipher::{open, protect, CipherPacket, Credential, CredentialRecord, CredentialStore};
pub use smc::{
    add_mod, completion, smc_combine, smc_split, sub_mod, AggregateMode, AggregateResult,
    AggregatorSet, SmcShareSet, DEFAULT_AGGREGATORS, SMC_MODULUS,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrivacyError {
    #[error("node {0} already holds a live credential")]
    AlreadyIssued(NodeId),
    #[error("credential validity range is empty")]
    Validity,
    #[error("credential of node {0} is not live")]
    Expired(NodeId),
    #[error("signature check failed for node {0}")]
    BadSignature(NodeId),
    #[error("malformed cipher packet")]
    Malformed,
    #[error("value {0} outside the share range")]
    OutOfRange(u64),
    #[error("need at least two aggregators, got {0}")]
    AggregatorCount(usize),
    #[error("aggregator {0} withheld its subtotal")]
    MissingShare(usize),
    #[error("curve error: {0}")]
    Curve(#[from] EccError),
}

/// Body of a shared reading: `round u32 ‖ share u64 × m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedReading {
    pub round: u32,
    pub shares: Vec<u64>,
}

impl SharedReading {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.round.to_be_bytes().to_vec();
        for s in &self.shares {
            out.extend_from_slice(&s.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], m: usize) -> Result<Self, PrivacyError> {
        if bytes.len() != 4 + 8 * m {
            return Err(PrivacyError::Malformed);
        }
        let mut r = Reader::new(bytes);
        let round = r.u32().map_err(|_| PrivacyError::Malformed)?;
        let shares = (0..m)
            .map(|_| r.u64().map_err(|_| PrivacyError::Malformed))
            .collect::<Result<_, _>>()?;
        Ok(SharedReading { round, shares })
    }
}

/// Body of an unprotected reading: `round u32 ‖ value u64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlainReading {
    pub round: u32,
    pub value: u64,
}

impl PlainReading {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.round.to_be_bytes().to_vec();
        out.extend_from_slice(&self.value.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PrivacyError> {
        let mut r = Reader::new(bytes);
        let round = r.u32().map_err(|_| PrivacyError::Malformed)?;
        let value = r.u64().map_err(|_| PrivacyError::Malformed)?;
        r.finish().map_err(|_| PrivacyError::Malformed)?;
        Ok(PlainReading { round, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecc::{Curve, CurveProfile, KeyPair};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (&'static Curve, KeyPair, Credential, ChaCha8Rng) {
        let curve = Curve::named(CurveProfile::P192);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gw = KeyPair::generate(curve, &mut rng);
        let dev = KeyPair::generate(curve, &mut rng);
        let mut store = CredentialStore::new();
        let cred = store
            .issue(NodeId(4), dev, *gw.public(), SMC_MODULUS, 0, 1000)
            .unwrap();
        (curve, gw, cred, rng)
    }

    #[test]
    fn issue_twice_rejected_until_retired() {
        let curve = Curve::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = CredentialStore::new();
        let k = KeyPair::generate(curve, &mut rng);
        let c = store.issue(NodeId(3), k.clone(), *k.public(), SMC_MODULUS, 5, 105).unwrap();
        assert_eq!(c.valid_to, c.valid_from + 100);
        assert_eq!(
            store.issue(NodeId(3), k.clone(), *k.public(), SMC_MODULUS, 5, 105),
            Err(PrivacyError::AlreadyIssued(NodeId(3)))
        );
        store.retire(NodeId(3));
        let c2 = store.issue(NodeId(3), k.clone(), *k.public(), SMC_MODULUS, 6, 106).unwrap();
        assert_ne!(c.id, c2.id);
    }

    #[test]
    fn protect_open_roundtrip() {
        let (curve, gw, cred, mut rng) = setup(2);
        let body = SharedReading {
            round: 7,
            shares: vec![1, 2, 3],
        }
        .encode();
        let pkt = protect(curve, &cred, &body, 10, &mut rng).unwrap();
        let wire = pkt.encode(curve);
        let back = CipherPacket::decode(curve, &wire).unwrap();
        assert_eq!(back, pkt);
        let pt = open(curve, &gw, cred.device_keypair.public(), &back).unwrap();
        assert_eq!(pt, body);
    }

    #[test]
    fn expired_credential_refused() {
        let (curve, _, cred, mut rng) = setup(3);
        assert_eq!(
            protect(curve, &cred, b"x", 1000, &mut rng),
            Err(PrivacyError::Expired(NodeId(4)))
        );
    }

    #[test]
    fn any_flipped_bit_fails() {
        let (curve, gw, cred, mut rng) = setup(4);
        let pkt = protect(curve, &cred, &PlainReading { round: 1, value: 42 }.encode(), 0, &mut rng).unwrap();
        let wire = pkt.encode(curve);
        for bit in 0..wire.len() * 8 {
            let mut w = wire.clone();
            w[bit / 8] ^= 1 << (bit % 8);
            let ok = CipherPacket::decode(curve, &w)
                .ok()
                .filter(|p| p.node == NodeId(4))
                .map(|p| open(curve, &gw, cred.device_keypair.public(), &p).is_ok())
                .unwrap_or(false);
            assert!(!ok, "bit {bit} survived");
        }
    }

    #[test]
    fn split_sums_to_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in [0, 42, SMC_MODULUS - 1] {
            let s = smc_split(NodeId(1), v, 3, SMC_MODULUS, &mut rng).unwrap();
            assert_eq!(s.reconstruct(SMC_MODULUS), v);
        }
        assert_eq!(
            smc_split(NodeId(1), SMC_MODULUS, 3, SMC_MODULUS, &mut rng),
            Err(PrivacyError::OutOfRange(SMC_MODULUS))
        );
        assert_eq!(
            smc_split(NodeId(1), 1, 1, SMC_MODULUS, &mut rng),
            Err(PrivacyError::AggregatorCount(1))
        );
    }

    #[test]
    fn aggregator_set_sums_and_aborts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut agg = AggregatorSet::new(3, SMC_MODULUS);
        for (i, v) in [5u64, 7, 9].into_iter().enumerate() {
            agg.accept(&smc_split(NodeId(i as u32), v, 3, SMC_MODULUS, &mut rng).unwrap())
                .unwrap();
        }
        let r = agg.combine(AggregateMode::Sum).unwrap();
        assert_eq!(r.sum, 21);
        assert_eq!(r.count, 3);
        assert_eq!(agg.combine(AggregateMode::Mean).unwrap().value(), 7.0);
        agg.withhold(1);
        assert_eq!(agg.combine(AggregateMode::Sum), Err(PrivacyError::MissingShare(1)));
    }

    #[test]
    fn completion_is_unique() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = 1_000_003;
        for _ in 0..100 {
            let known: Vec<u64> = (0..2).map(|_| rng.gen_range(0..q)).collect();
            let t = rng.gen_range(0..q);
            let c = completion(&known, t, q);
            let total = known.iter().fold(c, |a, s| add_mod(a, *s, q));
            assert_eq!(total, t);
        }
    }
}
