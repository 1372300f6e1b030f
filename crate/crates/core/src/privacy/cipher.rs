use std::collections::BTreeMap;

use rand::RngCore;

use super::PrivacyError;
use crate::ecc::{derive_shared, sign, verify, Curve, CurvePoint, KeyPair, SharedKey, Signature, U256};
use crate::hash::{hmac_sha256, keystream_xor};
use crate::simnet::{NodeId, Tick};
use crate::southbound::Reader;

/// Device-side credential: the operational key pair plus what the device
/// needs to protect readings for the gateway.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Credential {
    pub id: u64,
    pub node: NodeId,
    pub device_keypair: KeyPair,
    pub gateway_pub: CurvePoint,
    pub smc_modulus: u64,
    pub valid_from: Tick,
    pub valid_to: Tick,
}

impl Credential {
    pub fn is_live(&self, now: Tick) -> bool {
        self.valid_from <= now && now < self.valid_to
    }
}

/// Gateway-side view of an issued credential. Holds no secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CredentialRecord {
    pub id: u64,
    pub node: NodeId,
    pub device_pub: CurvePoint,
    pub valid_from: Tick,
    pub valid_to: Tick,
    pub live: bool,
}

#[derive(Clone, Debug, Default)]
pub struct CredentialStore {
    records: BTreeMap<NodeId, CredentialRecord>,
    next_id: u64,
}

impl CredentialStore {
    pub fn new() -> Self {
        CredentialStore::default()
    }

    /// Wraps a freshly generated key pair into a credential. Refused while
    /// the node still holds a live one.
    #[allow(clippy::too_many_arguments)]
    pub fn issue(
        &mut self,
        node: NodeId,
        device_keypair: KeyPair,
        gateway_pub: CurvePoint,
        smc_modulus: u64,
        valid_from: Tick,
        valid_to: Tick,
    ) -> Result<Credential, PrivacyError> {
        if matches!(self.records.get(&node), Some(r) if r.live) {
            return Err(PrivacyError::AlreadyIssued(node));
        }
        if valid_from >= valid_to {
            return Err(PrivacyError::Validity);
        }
        self.next_id += 1;
        let rec = CredentialRecord {
            id: self.next_id,
            node,
            device_pub: *device_keypair.public(),
            valid_from,
            valid_to,
            live: true,
        };
        self.records.insert(node, rec);
        Ok(Credential {
            id: self.next_id,
            node,
            device_keypair,
            gateway_pub,
            smc_modulus,
            valid_from,
            valid_to,
        })
    }

    /// Marks the node's credential dead, e.g. on revocation or before a
    /// renewal reissue.
    pub fn retire(&mut self, node: NodeId) {
        if let Some(r) = self.records.get_mut(&node) {
            r.live = false;
        }
    }

    pub fn get(&self, node: NodeId) -> Option<&CredentialRecord> {
        self.records.get(&node)
    }

    pub fn live(&self, node: NodeId) -> Option<&CredentialRecord> {
        self.records.get(&node).filter(|r| r.live)
    }

    pub fn records(&self) -> impl Iterator<Item = &CredentialRecord> {
        self.records.values()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CipherPacket {
    pub node: NodeId,
    pub ephemeral_pub: CurvePoint,
    pub ciphertext: Vec<u8>,
    pub signature: Signature,
}

impl CipherPacket {
    /// `node u32 ‖ ephemeral point ‖ ct_len u16 ‖ ct ‖ e ‖ s`.
    pub fn encode(&self, curve: &Curve) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.node.0.to_be_bytes());
        out.extend(curve.encode_point(&self.ephemeral_pub));
        out.extend_from_slice(&(self.ciphertext.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend(self.signature.encode(curve));
        out
    }

    pub fn decode(curve: &Curve, bytes: &[u8]) -> Result<Self, PrivacyError> {
        let mut r = Reader::new(bytes);
        let node = NodeId(r.u32().map_err(|_| PrivacyError::Malformed)?);
        let tag = *bytes.get(4).ok_or(PrivacyError::Malformed)?;
        let plen = if tag == 0 { 1 } else { curve.point_len() };
        let eph = r.take(plen).map_err(|_| PrivacyError::Malformed)?;
        let ephemeral_pub = curve.decode_point(eph).map_err(|_| PrivacyError::Malformed)?;
        let n = r.u16().map_err(|_| PrivacyError::Malformed)? as usize;
        let ciphertext = r.take(n).map_err(|_| PrivacyError::Malformed)?.to_vec();
        let sig = r.rest();
        let signature = Signature::decode(curve, sig).map_err(|_| PrivacyError::Malformed)?;
        Ok(CipherPacket {
            node,
            ephemeral_pub,
            ciphertext,
            signature,
        })
    }

    fn signed_bytes(&self, curve: &Curve) -> Vec<u8> {
        let mut m = curve.encode_point(&self.ephemeral_pub);
        m.extend_from_slice(&self.ciphertext);
        m
    }
}

fn stream_key(shared: &SharedKey) -> [u8; 32] {
    hmac_sha256(shared.as_bytes(), &[b"reading-enc"])
}

/// Encrypts `plaintext` to the gateway under an ephemeral ECDH key and
/// signs `ephemeral ‖ ciphertext` with the device key.
pub fn protect<R: RngCore + ?Sized>(
    curve: &Curve,
    cred: &Credential,
    plaintext: &[u8],
    now: Tick,
    rng: &mut R,
) -> Result<CipherPacket, PrivacyError> {
    if !cred.is_live(now) {
        return Err(PrivacyError::Expired(cred.node));
    }
    let eph = KeyPair::generate(curve, rng);
    let shared = derive_shared(curve, eph.secret(), &cred.gateway_pub)?;
    let mut ciphertext = plaintext.to_vec();
    keystream_xor(&stream_key(&shared), &mut ciphertext);
    let mut pkt = CipherPacket {
        node: cred.node,
        ephemeral_pub: *eph.public(),
        ciphertext,
        signature: Signature {
            e: U256::ZERO,
            s: U256::ZERO,
        },
    };
    pkt.signature = sign(curve, &cred.device_keypair, &pkt.signed_bytes(curve));
    Ok(pkt)
}

/// Verifies the signature under `device_pub` and decrypts with the gateway
/// key.
pub fn open(
    curve: &Curve,
    gateway: &KeyPair,
    device_pub: &CurvePoint,
    pkt: &CipherPacket,
) -> Result<Vec<u8>, PrivacyError> {
    if !verify(curve, device_pub, &pkt.signed_bytes(curve), &pkt.signature) {
        return Err(PrivacyError::BadSignature(pkt.node));
    }
    let shared = derive_shared(curve, gateway.secret(), &pkt.ephemeral_pub)?;
    let mut pt = pkt.ciphertext.clone();
    keystream_xor(&stream_key(&shared), &mut pt);
    Ok(pt)
}
