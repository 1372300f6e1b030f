//! Key generation, ECDH distribution, storage, renewal and revocation.
//!
//! The gateway owns a long-term key pair whose public point devices carry
//! from provisioning. A joining device sends a bootstrap public point; the
//! gateway answers with its operational key pair sealed under the ECDH key
//! of the two points, so only public points cross the wire in clear.

use std::collections::BTreeMap;

use rand::RngCore;
use thiserror::Error;

use crate::ecc::{derive_shared, Curve, CurvePoint, EccError, KeyPair, SharedKey};
use crate::hash::{hmac_sha256, keystream_xor, tags_equal};
use crate::simnet::{NodeId, Tick};
use crate::southbound::{Message, Reader};

pub const DEFAULT_KEY_LIFETIME: Tick = 10_000;
pub const DEFAULT_RENEWAL_FRACTION: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error("node {0} is unknown to the key store")]
    Unknown(NodeId),
    #[error("keys of node {0} are revoked")]
    Revoked(NodeId),
    #[error("node {node} presented epoch {presented}, live epoch is {live}")]
    StaleEpoch {
        node: NodeId,
        presented: u32,
        live: u32,
    },
    #[error("keys of node {0} expired")]
    Expired(NodeId),
    #[error("curve error: {0}")]
    Curve(#[from] EccError),
    #[error("sealed key bundle failed verification")]
    BadBundle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyState {
    Live,
    Revoked,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyStoreEntry {
    pub node: NodeId,
    pub public: CurvePoint,
    pub pairwise: BTreeMap<NodeId, SharedKey>,
    pub state: KeyState,
    pub epoch: u32,
    pub issued_at: Tick,
    pub valid_to: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevocationReceipt {
    pub nodes: Vec<NodeId>,
    pub reason: String,
    pub tick: Tick,
    /// Wire message to broadcast to every cluster head; `None` for an
    /// empty request.
    pub message: Option<Message>,
}

pub struct KeyManager {
    curve: &'static Curve,
    gateway: KeyPair,
    entries: BTreeMap<NodeId, KeyStoreEntry>,
    rejoin_allowed: BTreeMap<NodeId, bool>,
    lifetime: Tick,
    renewal_fraction: f64,
}

impl KeyManager {
    pub fn new(curve: &'static Curve, gateway: KeyPair, lifetime: Tick) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(
            NodeId::GATEWAY,
            KeyStoreEntry {
                node: NodeId::GATEWAY,
                public: *gateway.public(),
                pairwise: BTreeMap::new(),
                state: KeyState::Live,
                epoch: 1,
                issued_at: 0,
                valid_to: Tick::MAX,
            },
        );
        KeyManager {
            curve,
            gateway,
            entries,
            rejoin_allowed: BTreeMap::new(),
            lifetime: lifetime.max(1),
            renewal_fraction: DEFAULT_RENEWAL_FRACTION,
        }
    }

    pub fn curve(&self) -> &'static Curve {
        self.curve
    }

    pub fn gateway_public(&self) -> &CurvePoint {
        self.gateway.public()
    }

    pub fn gateway_keys(&self) -> &KeyPair {
        &self.gateway
    }

    pub fn lifetime(&self) -> Tick {
        self.lifetime
    }

    pub fn entry(&self, node: NodeId) -> Option<&KeyStoreEntry> {
        self.entries.get(&node)
    }

    pub fn entries(&self) -> impl Iterator<Item = &KeyStoreEntry> {
        self.entries.values()
    }

    /// Fresh key pair for `node` at epoch + 1. A revoked node is refused
    /// until [`KeyManager::allow_reregistration`] is called for it.
    pub fn generate_keypair_for<R: RngCore + ?Sized>(
        &mut self,
        node: NodeId,
        now: Tick,
        rng: &mut R,
    ) -> Result<(KeyStoreEntry, KeyPair), KeyError> {
        let prev_epoch = match self.entries.get(&node) {
            Some(e) if e.state == KeyState::Revoked => {
                if !self.rejoin_allowed.get(&node).copied().unwrap_or(false) {
                    return Err(KeyError::Revoked(node));
                }
                e.epoch
            }
            Some(e) => e.epoch,
            None => 0,
        };
        self.rejoin_allowed.remove(&node);
        let kp = KeyPair::generate(self.curve, rng);
        let entry = KeyStoreEntry {
            node,
            public: *kp.public(),
            pairwise: BTreeMap::new(),
            state: KeyState::Live,
            epoch: prev_epoch + 1,
            issued_at: now,
            valid_to: now.saturating_add(self.lifetime),
        };
        self.entries.insert(node, entry.clone());
        Ok((entry, kp))
    }

    pub fn allow_reregistration(&mut self, node: NodeId) {
        self.rejoin_allowed.insert(node, true);
    }

    pub fn is_live(&self, node: NodeId) -> bool {
        matches!(self.entries.get(&node), Some(e) if e.state == KeyState::Live)
    }

    /// Live entry for `node` valid at `now`, optionally checking the epoch
    /// the sender claims.
    pub fn check(&self, node: NodeId, epoch: Option<u32>, now: Tick) -> Result<&KeyStoreEntry, KeyError> {
        let e = self.entries.get(&node).ok_or(KeyError::Unknown(node))?;
        if e.state == KeyState::Revoked {
            return Err(KeyError::Revoked(node));
        }
        if let Some(p) = epoch {
            if p != e.epoch {
                return Err(KeyError::StaleEpoch {
                    node,
                    presented: p,
                    live: e.epoch,
                });
            }
        }
        if now >= e.valid_to {
            return Err(KeyError::Expired(node));
        }
        Ok(e)
    }

    pub fn needs_renewal(&self, node: NodeId, now: Tick) -> bool {
        match self.entries.get(&node) {
            Some(e) if e.state == KeyState::Live && node != NodeId::GATEWAY => {
                let span = (e.valid_to - e.issued_at) as f64;
                now >= e.issued_at + (span * self.renewal_fraction) as Tick
            }
            _ => false,
        }
    }

    /// Derives the pairwise key between `a` (whose key pair the caller
    /// holds) and `b`'s registered public point, and records it under `a`.
    pub fn establish_pairwise(
        &mut self,
        a: NodeId,
        a_keys: &KeyPair,
        b: NodeId,
    ) -> Result<SharedKey, KeyError> {
        for n in [a, b] {
            let e = self.entries.get(&n).ok_or(KeyError::Unknown(n))?;
            if e.state == KeyState::Revoked {
                return Err(KeyError::Revoked(n));
            }
        }
        let peer = self.entries[&b].public;
        let key = derive_shared(self.curve, a_keys.secret(), &peer)?;
        self.entries
            .get_mut(&a)
            .expect("checked above")
            .pairwise
            .insert(b, key);
        Ok(key)
    }

    /// The gateway's side of its pairwise key with `node`.
    pub fn gateway_pairwise(&mut self, node: NodeId) -> Result<SharedKey, KeyError> {
        let gw = self.gateway.clone();
        self.establish_pairwise(NodeId::GATEWAY, &gw, node)
    }

    pub fn revoke(&mut self, nodes: &[NodeId], reason: &str, now: Tick) -> Result<RevocationReceipt, KeyError> {
        for n in nodes {
            if !self.entries.contains_key(n) || *n == NodeId::GATEWAY {
                return Err(KeyError::Unknown(*n));
            }
        }
        let mut revoked = Vec::new();
        for n in nodes {
            if revoked.contains(n) {
                continue;
            }
            let e = self.entries.get_mut(n).expect("checked above");
            e.state = KeyState::Revoked;
            e.pairwise.clear();
            revoked.push(*n);
        }
        for e in self.entries.values_mut() {
            for n in &revoked {
                e.pairwise.remove(n);
            }
        }
        let message = (!revoked.is_empty()).then(|| Message::Revoke {
            nodes: revoked.clone(),
        });
        Ok(RevocationReceipt {
            nodes: revoked,
            reason: reason.to_string(),
            tick: now,
            message,
        })
    }
}

/// Key bundle sent to a device after it joins or renews.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyBundle {
    pub keys: KeyPair,
    pub epoch: u32,
    pub valid_to: Tick,
}

fn bundle_keys(shared: &SharedKey) -> ([u8; 32], [u8; 32]) {
    (
        hmac_sha256(shared.as_bytes(), &[b"bundle-enc"]),
        hmac_sha256(shared.as_bytes(), &[b"bundle-mac"]),
    )
}

/// `epoch u32 ‖ valid_to u64 ‖ enc(secret) ‖ mac32`, encrypted under the
/// ECDH key of the gateway and the device's bootstrap point.
pub fn seal_bundle(
    curve: &Curve,
    gateway: &KeyPair,
    bootstrap_pub: &CurvePoint,
    bundle: &KeyBundle,
) -> Result<Vec<u8>, KeyError> {
    let shared = derive_shared(curve, gateway.secret(), bootstrap_pub)?;
    let (enc, mac) = bundle_keys(&shared);
    let mut out = Vec::new();
    out.extend_from_slice(&bundle.epoch.to_be_bytes());
    out.extend_from_slice(&bundle.valid_to.to_be_bytes());
    let mut secret = curve.encode_scalar(bundle.keys.secret().expose());
    keystream_xor(&enc, &mut secret);
    out.extend_from_slice(&secret);
    let tag = hmac_sha256(&mac, &[&out]);
    out.extend_from_slice(&tag);
    Ok(out)
}

pub fn open_bundle(
    curve: &Curve,
    bootstrap: &KeyPair,
    gateway_pub: &CurvePoint,
    bytes: &[u8],
) -> Result<KeyBundle, KeyError> {
    let shared = derive_shared(curve, bootstrap.secret(), gateway_pub)?;
    let (enc, mac) = bundle_keys(&shared);
    if bytes.len() != 12 + curve.scalar_len() + 32 {
        return Err(KeyError::BadBundle);
    }
    let (body, tag) = bytes.split_at(bytes.len() - 32);
    if !tags_equal(&hmac_sha256(&mac, &[body]), tag) {
        return Err(KeyError::BadBundle);
    }
    let mut r = Reader::new(body);
    let epoch = r.u32().map_err(|_| KeyError::BadBundle)?;
    let valid_to = r.u64().map_err(|_| KeyError::BadBundle)?;
    let mut secret = r.rest().to_vec();
    keystream_xor(&enc, &mut secret);
    let k = curve.decode_scalar(&secret)?;
    Ok(KeyBundle {
        keys: KeyPair::from_secret(curve, k)?,
        epoch,
        valid_to,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecc::CurveProfile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn manager(seed: u64) -> (KeyManager, ChaCha8Rng) {
        let curve = Curve::named(CurveProfile::P192);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gw = KeyPair::generate(curve, &mut rng);
        (KeyManager::new(curve, gw, DEFAULT_KEY_LIFETIME), rng)
    }

    #[test]
    fn epochs_and_renewal() {
        let (mut km, mut rng) = manager(1);
        let (e1, k1) = km.generate_keypair_for(NodeId(5), 0, &mut rng).unwrap();
        assert_eq!(e1.epoch, 1);
        assert_eq!(e1.state, KeyState::Live);
        assert!(!km.needs_renewal(NodeId(5), 7_999));
        assert!(km.needs_renewal(NodeId(5), 8_000));
        let (e2, k2) = km.generate_keypair_for(NodeId(5), 8_000, &mut rng).unwrap();
        assert_eq!(e2.epoch, 2);
        assert_ne!(k1.public(), k2.public());
        assert!(matches!(
            km.check(NodeId(5), Some(1), 8_001),
            Err(KeyError::StaleEpoch { .. })
        ));
        assert!(km.check(NodeId(5), Some(2), 8_001).is_ok());
        assert_eq!(km.check(NodeId(5), None, 18_000), Err(KeyError::Expired(NodeId(5))));
    }

    #[test]
    fn revocation_lifecycle() {
        let (mut km, mut rng) = manager(2);
        km.generate_keypair_for(NodeId(5), 0, &mut rng).unwrap();
        let r = km.revoke(&[NodeId(5)], "test", 10).unwrap();
        assert_eq!(r.message, Some(Message::Revoke { nodes: vec![NodeId(5)] }));
        assert_eq!(km.check(NodeId(5), None, 11), Err(KeyError::Revoked(NodeId(5))));
        assert_eq!(
            km.generate_keypair_for(NodeId(5), 12, &mut rng).unwrap_err(),
            KeyError::Revoked(NodeId(5))
        );
        km.allow_reregistration(NodeId(5));
        let (e, _) = km.generate_keypair_for(NodeId(5), 13, &mut rng).unwrap();
        assert_eq!(e.epoch, 2);
        assert!(km.check(NodeId(5), Some(2), 14).is_ok());
    }

    #[test]
    fn empty_revocation_is_noop() {
        let (mut km, _) = manager(3);
        let r = km.revoke(&[], "none", 0).unwrap();
        assert!(r.nodes.is_empty() && r.message.is_none());
    }

    #[test]
    fn pairwise_keys_agree() {
        let (mut km, mut rng) = manager(4);
        let (_, ka) = km.generate_keypair_for(NodeId(3), 0, &mut rng).unwrap();
        let (_, kb) = km.generate_keypair_for(NodeId(4), 0, &mut rng).unwrap();
        let ab = km.establish_pairwise(NodeId(3), &ka, NodeId(4)).unwrap();
        let ba = km.establish_pairwise(NodeId(4), &kb, NodeId(3)).unwrap();
        assert_eq!(ab, ba);
        let ga = km.gateway_pairwise(NodeId(3)).unwrap();
        assert_eq!(ga, km.establish_pairwise(NodeId(3), &ka, NodeId::GATEWAY).unwrap());
        km.revoke(&[NodeId(4)], "t", 1).unwrap();
        assert_eq!(
            km.establish_pairwise(NodeId(3), &ka, NodeId(4)),
            Err(KeyError::Revoked(NodeId(4)))
        );
    }

    #[test]
    fn sealed_bundle_roundtrip_and_tamper() {
        let (mut km, mut rng) = manager(5);
        let curve = km.curve();
        let boot = KeyPair::generate(curve, &mut rng);
        let (e, kp) = km.generate_keypair_for(NodeId(3), 0, &mut rng).unwrap();
        let bundle = KeyBundle {
            keys: kp.clone(),
            epoch: e.epoch,
            valid_to: e.valid_to,
        };
        let sealed = seal_bundle(curve, km.gateway_keys(), boot.public(), &bundle).unwrap();
        let secret = curve.encode_scalar(kp.secret().expose());
        assert!(!sealed.windows(secret.len()).any(|w| w == secret.as_slice()));
        let opened = open_bundle(curve, &boot, km.gateway_public(), &sealed).unwrap();
        assert_eq!(opened, bundle);
        let mut bad = sealed.clone();
        bad[14] ^= 1;
        assert_eq!(
            open_bundle(curve, &boot, km.gateway_public(), &bad),
            Err(KeyError::BadBundle)
        );
    }
}
