//! Device side of the protocols: joining, unpacking key bundles, building
//! readings and answering authentication challenges.

use rand::RngCore;

use crate::authn::{compute_proof, AuthFrame, AuthOp, Principal};
use crate::ecc::{derive_shared, Curve, CurvePoint, KeyPair};
use crate::gateway::{JoinReply, JoinStatus};
use crate::keymgmt::open_bundle;
use crate::privacy::{protect, smc_split, Credential, PlainReading, PrivacyError, SharedReading};
use crate::simnet::{NodeId, Tick};
use crate::southbound::{encode, Message, MsgType, Packet};

/// Key material held by one device.
#[derive(Clone, Debug)]
pub struct DeviceKeys {
    pub node: NodeId,
    pub bootstrap: KeyPair,
    pub operational: Option<KeyPair>,
    pub epoch: u32,
    pub valid_to: Tick,
    pub credential: Option<Credential>,
    /// Key shared with the gateway for challenge-response.
    pub service_key: Option<[u8; 32]>,
}

impl DeviceKeys {
    pub fn new(node: NodeId, bootstrap: KeyPair) -> Self {
        DeviceKeys {
            node,
            bootstrap,
            operational: None,
            epoch: 0,
            valid_to: 0,
            credential: None,
            service_key: None,
        }
    }

    pub fn join_frame(&self, curve: &Curve) -> Vec<u8> {
        encode(&Message::JoinRequest {
            node: self.node,
            pubkey: curve.encode_point(self.bootstrap.public()),
        })
        .expect("join request fits")
    }

    /// Installs the keys carried by an accepted or renewed join reply.
    /// A first bundle is sealed to the bootstrap key, renewals to the
    /// current operational key.
    pub fn accept(
        &mut self,
        curve: &Curve,
        gateway_pub: &CurvePoint,
        reply: &JoinReply,
        smc_modulus: u64,
        with_keys: bool,
        private: bool,
    ) -> Result<(), String> {
        match reply.status {
            JoinStatus::Rejected => return Err("join rejected".into()),
            JoinStatus::Renewed if self.operational.is_none() => return Err("renewal before join".into()),
            _ => {}
        }
        if !with_keys {
            self.epoch = 0;
            return Ok(());
        }
        let opener = match reply.status {
            JoinStatus::Renewed => self.operational.as_ref().expect("checked"),
            _ => &self.bootstrap,
        };
        let bundle = open_bundle(curve, opener, gateway_pub, &reply.bundle).map_err(|e| e.to_string())?;
        let shared = derive_shared(curve, bundle.keys.secret(), gateway_pub).map_err(|e| e.to_string())?;
        self.service_key = Some(shared.0);
        self.credential = private.then(|| Credential {
            id: reply.credential,
            node: self.node,
            device_keypair: bundle.keys.clone(),
            gateway_pub: *gateway_pub,
            smc_modulus,
            valid_from: reply.valid_from,
            valid_to: bundle.valid_to,
        });
        self.operational = Some(bundle.keys);
        self.epoch = bundle.epoch;
        self.valid_to = bundle.valid_to;
        Ok(())
    }

    /// Reading payload for `round`: split into `m` shares and protected
    /// when a credential is available, plain otherwise.
    pub fn reading_payload<R: RngCore>(
        &self,
        curve: &Curve,
        round: u32,
        value: u64,
        m: usize,
        now: Tick,
        private: bool,
        rng: &mut R,
    ) -> Result<Vec<u8>, PrivacyError> {
        if !private {
            return Ok(PlainReading { round, value }.encode());
        }
        let cred = self.credential.as_ref().ok_or(PrivacyError::Expired(self.node))?;
        let shares = smc_split(self.node, value, m, cred.smc_modulus, rng)?.shares;
        let pt = SharedReading { round, shares }.encode();
        Ok(protect(curve, cred, &pt, now, rng)?.encode(curve))
    }

    /// Answer to a challenge from `service`: own proof over its nonce plus
    /// a counter-nonce.
    pub fn answer<R: RngCore>(&self, challenge: &AuthFrame, rng: &mut R) -> Option<AuthFrame> {
        let key = self.service_key?;
        let mut nonce_r = [0u8; 16];
        rng.fill_bytes(&mut nonce_r);
        Some(AuthFrame {
            op: AuthOp::Response,
            principal: Principal::Node(self.node),
            session: challenge.session,
            nonce: nonce_r,
            proof: compute_proof(&key, &challenge.nonce, Principal::Node(self.node)),
        })
    }
}

/// Auth request asking `service` for a grant on behalf of `principal`.
pub fn auth_request(principal: NodeId, service: u32) -> AuthFrame {
    AuthFrame {
        op: AuthOp::Request,
        principal: Principal::Node(principal),
        session: service as u64,
        nonce: [0; 16],
        proof: [0; 32],
    }
}

/// Wraps a payload into an encoded data frame.
pub fn data_frame(src: NodeId, dst: NodeId, msg_type: MsgType, payload: Vec<u8>) -> Vec<u8> {
    encode(&Message::Data(Packet::new(src, dst, msg_type, payload))).expect("payload fits")
}
