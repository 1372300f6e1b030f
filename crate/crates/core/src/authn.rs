//! Mutual challenge-response between devices and services, brokered by the
//! gateway. Proofs are HMAC-SHA-256 over `nonce ‖ principal` under the
//! principal's service access key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hash::{hmac_sha256, tags_equal};
use crate::simnet::{NodeId, Tick};
use crate::southbound::Reader;

pub const DEFAULT_SESSION_TIMEOUT: Tick = 50;
pub const DEFAULT_GRANT_LIFETIME: Tick = 1_000;

pub type Nonce = [u8; 16];
pub type Proof = [u8; 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Principal {
    Node(NodeId),
    Service(u32),
}

impl Principal {
    fn kind_code(self) -> u8 {
        match self {
            Principal::Node(_) => 0,
            Principal::Service(_) => 1,
        }
    }

    fn raw_id(self) -> u32 {
        match self {
            Principal::Node(n) => n.0,
            Principal::Service(s) => s,
        }
    }

    pub fn to_bytes(self) -> [u8; 5] {
        let mut b = [0u8; 5];
        b[0] = self.kind_code();
        b[1..].copy_from_slice(&self.raw_id().to_be_bytes());
        b
    }

    pub fn from_parts(kind: u8, id: u32) -> Option<Self> {
        match kind {
            0 => Some(Principal::Node(NodeId(id))),
            1 => Some(Principal::Service(id)),
            _ => None,
        }
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::Node(n) => write!(f, "node:{n}"),
            Principal::Service(s) => write!(f, "service:{s}"),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ServiceAccessKey {
    pub principal: Principal,
    pub key: [u8; 32],
    pub issued_at: Tick,
    pub revoked: bool,
}

impl fmt::Debug for ServiceAccessKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServiceAccessKey")
            .field("principal", &self.principal)
            .field("issued_at", &self.issued_at)
            .field("revoked", &self.revoked)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailReason {
    Expired,
    BadProof,
    Replay,
    Revoked,
}

impl FailReason {
    pub fn name(self) -> &'static str {
        match self {
            FailReason::Expired => "expired",
            FailReason::BadProof => "bad_proof",
            FailReason::Replay => "replay",
            FailReason::Revoked => "revoked",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Issued,
    HalfAuthenticated,
    Mutual,
    Failed(FailReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChallengeSession {
    pub id: u64,
    pub initiator: Principal,
    pub responder: Principal,
    pub nonce_i: Nonce,
    pub nonce_r: Option<Nonce>,
    pub state: SessionState,
    pub expiry: Tick,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("principal {0} has no service access key")]
    UnknownPrincipal(Principal),
    #[error("principal {0} is revoked")]
    Revoked(Principal),
    #[error("no session {0}")]
    UnknownSession(u64),
    #[error("session {0} failed: {1:?}")]
    Failed(u64, FailReason),
    #[error("session {0} is not awaiting that proof")]
    WrongStep(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Responder,
    Initiator,
}

/// `HMAC(key, nonce ‖ principal)`.
pub fn compute_proof(key: &[u8; 32], nonce: &Nonce, principal: Principal) -> Proof {
    hmac_sha256(key, &[nonce, &principal.to_bytes()])
}

/// Responder side: answers `nonce_i` and picks a counter-challenge.
pub fn respond<R: RngCore + ?Sized>(
    responder: Principal,
    key: &[u8; 32],
    nonce_i: &Nonce,
    rng: &mut R,
) -> (Proof, Nonce) {
    let mut nonce_r = [0u8; 16];
    rng.fill_bytes(&mut nonce_r);
    (compute_proof(key, nonce_i, responder), nonce_r)
}

pub struct Authenticator {
    keys: BTreeMap<Principal, ServiceAccessKey>,
    sessions: BTreeMap<u64, ChallengeSession>,
    used_nonces: BTreeSet<Nonce>,
    issued_nonces: BTreeSet<Nonce>,
    grants: BTreeMap<(Principal, Principal), Tick>,
    failures: BTreeMap<Principal, u64>,
    next_session: u64,
    timeout: Tick,
    grant_lifetime: Tick,
    rng: ChaCha8Rng,
}

impl Authenticator {
    pub fn new(seed: u64, timeout: Tick, grant_lifetime: Tick) -> Self {
        Authenticator {
            keys: BTreeMap::new(),
            sessions: BTreeMap::new(),
            used_nonces: BTreeSet::new(),
            issued_nonces: BTreeSet::new(),
            grants: BTreeMap::new(),
            failures: BTreeMap::new(),
            next_session: 0,
            timeout,
            grant_lifetime,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn register_key(&mut self, principal: Principal, key: [u8; 32], now: Tick) {
        self.keys.insert(
            principal,
            ServiceAccessKey {
                principal,
                key,
                issued_at: now,
                revoked: false,
            },
        );
    }

    pub fn revoke(&mut self, principal: Principal) {
        if let Some(k) = self.keys.get_mut(&principal) {
            k.revoked = true;
        }
        self.grants
            .retain(|(a, b), _| *a != principal && *b != principal);
    }

    pub fn key_of(&self, principal: Principal) -> Option<&ServiceAccessKey> {
        self.keys.get(&principal)
    }

    pub fn session(&self, id: u64) -> Option<&ChallengeSession> {
        self.sessions.get(&id)
    }

    pub fn failures(&self, principal: Principal) -> u64 {
        self.failures.get(&principal).copied().unwrap_or(0)
    }

    fn live_key(&self, p: Principal) -> Result<&ServiceAccessKey, AuthError> {
        let k = self.keys.get(&p).ok_or(AuthError::UnknownPrincipal(p))?;
        if k.revoked {
            return Err(AuthError::Revoked(p));
        }
        Ok(k)
    }

    fn fresh_nonce(&mut self) -> Nonce {
        loop {
            let mut n = [0u8; 16];
            self.rng.fill_bytes(&mut n);
            if !self.used_nonces.contains(&n) && self.issued_nonces.insert(n) {
                return n;
            }
        }
    }

    pub fn begin(&mut self, initiator: Principal, responder: Principal, now: Tick) -> Result<ChallengeSession, AuthError> {
        self.live_key(initiator)?;
        self.next_session += 1;
        let s = ChallengeSession {
            id: self.next_session,
            initiator,
            responder,
            nonce_i: {
                let n = self.fresh_nonce();
                self.issued_nonces.remove(&n);
                self.used_nonces.insert(n);
                n
            },
            nonce_r: None,
            state: SessionState::Issued,
            expiry: now + self.timeout,
        };
        self.sessions.insert(s.id, s.clone());
        Ok(s)
    }

    /// Responder proof computed with `responder_key`, for when the
    /// responder is hosted next to the broker.
    pub fn respond(&mut self, id: u64, responder_key: &[u8; 32], now: Tick) -> Result<(Proof, Nonce), AuthError> {
        let s = self.sessions.get_mut(&id).ok_or(AuthError::UnknownSession(id))?;
        if let SessionState::Failed(r) = s.state {
            return Err(AuthError::Failed(id, r));
        }
        if s.state != SessionState::Issued {
            return Err(AuthError::WrongStep(id));
        }
        if now > s.expiry {
            s.state = SessionState::Failed(FailReason::Expired);
            return Err(AuthError::Failed(id, FailReason::Expired));
        }
        let (responder, nonce_i) = (s.responder, s.nonce_i);
        let nonce_r = self.fresh_nonce();
        Ok((compute_proof(responder_key, &nonce_i, responder), nonce_r))
    }

    fn fail(&mut self, id: u64, who: Principal, reason: FailReason) -> AuthError {
        if let Some(s) = self.sessions.get_mut(&id) {
            if !matches!(s.state, SessionState::Mutual) {
                s.state = SessionState::Failed(reason);
            }
        }
        *self.failures.entry(who).or_default() += 1;
        AuthError::Failed(id, reason)
    }

    /// Checks a proof. The responder proof (over `nonce_i`, carrying the
    /// counter-challenge `nonce_r`) moves an issued session to
    /// half-authenticated; the initiator proof over `nonce_r` completes it.
    pub fn verify(
        &mut self,
        id: u64,
        role: Role,
        proof: &Proof,
        nonce_r: Option<Nonce>,
        now: Tick,
    ) -> Result<SessionState, AuthError> {
        let s = self.sessions.get(&id).cloned().ok_or(AuthError::UnknownSession(id))?;
        let who = match role {
            Role::Responder => s.responder,
            Role::Initiator => s.initiator,
        };
        match s.state {
            SessionState::Mutual => return Err(self.fail(id, who, FailReason::Replay)),
            SessionState::Failed(r) => return Err(AuthError::Failed(id, r)),
            _ => {}
        }
        if now > s.expiry {
            return Err(self.fail(id, who, FailReason::Expired));
        }
        let key = match self.live_key(who) {
            Ok(k) => k.key,
            Err(_) => return Err(self.fail(id, who, FailReason::Revoked)),
        };
        match (role, s.state) {
            (Role::Responder, SessionState::Issued) => {
                let Some(nr) = nonce_r else {
                    return Err(self.fail(id, who, FailReason::BadProof));
                };
                if !tags_equal(proof, &compute_proof(&key, &s.nonce_i, who)) {
                    return Err(self.fail(id, who, FailReason::BadProof));
                }
                if !self.used_nonces.insert(nr) {
                    return Err(self.fail(id, who, FailReason::Replay));
                }
                self.issued_nonces.remove(&nr);
                let sess = self.sessions.get_mut(&id).expect("present");
                sess.nonce_r = Some(nr);
                sess.state = SessionState::HalfAuthenticated;
                Ok(sess.state)
            }
            (Role::Initiator, SessionState::HalfAuthenticated) => {
                let nr = s.nonce_r.expect("set at half-authenticated");
                if !tags_equal(proof, &compute_proof(&key, &nr, who)) {
                    return Err(self.fail(id, who, FailReason::BadProof));
                }
                let sess = self.sessions.get_mut(&id).expect("present");
                sess.state = SessionState::Mutual;
                self.grants
                    .insert((s.initiator, s.responder), now + self.grant_lifetime);
                Ok(SessionState::Mutual)
            }
            _ => Err(AuthError::WrongStep(id)),
        }
    }

    pub fn has_grant(&self, a: Principal, b: Principal, now: Tick) -> bool {
        let live = |p: Principal| self.keys.get(&p).is_some_and(|k| !k.revoked);
        live(a)
            && live(b)
            && (self.grants.get(&(a, b)).is_some_and(|t| now <= *t)
                || self.grants.get(&(b, a)).is_some_and(|t| now <= *t))
    }

    /// Drops sessions past expiry; they can no longer change state.
    pub fn expire(&mut self, now: Tick) {
        for s in self.sessions.values_mut() {
            if now > s.expiry && matches!(s.state, SessionState::Issued | SessionState::HalfAuthenticated) {
                s.state = SessionState::Failed(FailReason::Expired);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuthOp {
    Request,
    Challenge,
    Response,
    Grant,
    Deny,
}

impl AuthOp {
    fn code(self) -> u8 {
        match self {
            AuthOp::Request => 0,
            AuthOp::Challenge => 1,
            AuthOp::Response => 2,
            AuthOp::Grant => 3,
            AuthOp::Deny => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [
            AuthOp::Request,
            AuthOp::Challenge,
            AuthOp::Response,
            AuthOp::Grant,
            AuthOp::Deny,
        ]
        .get(c as usize)
        .copied()
    }
}

/// Payload of an `auth` data packet:
/// `op u8 ‖ kind u8 ‖ id u32 ‖ session u64 ‖ nonce 16 ‖ proof 32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuthFrame {
    pub op: AuthOp,
    pub principal: Principal,
    pub session: u64,
    pub nonce: Nonce,
    pub proof: Proof,
}

impl AuthFrame {
    pub const LEN: usize = 1 + 5 + 8 + 16 + 32;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.push(self.op.code());
        out.extend_from_slice(&self.principal.to_bytes());
        out.extend_from_slice(&self.session.to_be_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.proof);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::LEN {
            return None;
        }
        let mut r = Reader::new(bytes);
        let op = AuthOp::from_code(r.u8().ok()?)?;
        let kind = r.u8().ok()?;
        let principal = Principal::from_parts(kind, r.u32().ok()?)?;
        let session = r.u64().ok()?;
        let nonce = r.take(16).ok()?.try_into().ok()?;
        let proof = r.take(32).ok()?.try_into().ok()?;
        Some(AuthFrame {
            op,
            principal,
            session,
            nonce,
            proof,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEV: Principal = Principal::Node(NodeId(5));
    const SVC: Principal = Principal::Service(1);

    fn setup() -> (Authenticator, ChaCha8Rng) {
        let mut a = Authenticator::new(1, DEFAULT_SESSION_TIMEOUT, DEFAULT_GRANT_LIFETIME);
        a.register_key(SVC, [1; 32], 0);
        a.register_key(DEV, [2; 32], 0);
        (a, ChaCha8Rng::seed_from_u64(9))
    }

    #[test]
    fn happy_path_reaches_mutual() {
        let (mut a, mut rng) = setup();
        let s = a.begin(SVC, DEV, 0).unwrap();
        assert_eq!(s.state, SessionState::Issued);
        let (proof, nr) = respond(DEV, &[2; 32], &s.nonce_i, &mut rng);
        assert_eq!(
            a.verify(s.id, Role::Responder, &proof, Some(nr), 1),
            Ok(SessionState::HalfAuthenticated)
        );
        let p_i = compute_proof(&[1; 32], &nr, SVC);
        assert_eq!(a.verify(s.id, Role::Initiator, &p_i, None, 2), Ok(SessionState::Mutual));
        assert!(a.has_grant(DEV, SVC, 3));
        assert_eq!(
            a.verify(s.id, Role::Initiator, &p_i, None, 3),
            Err(AuthError::Failed(s.id, FailReason::Replay))
        );
    }

    #[test]
    fn wrong_key_fails_and_is_counted() {
        let (mut a, mut rng) = setup();
        let s = a.begin(SVC, DEV, 0).unwrap();
        let (proof, nr) = respond(DEV, &[3; 32], &s.nonce_i, &mut rng);
        assert_eq!(
            a.verify(s.id, Role::Responder, &proof, Some(nr), 1),
            Err(AuthError::Failed(s.id, FailReason::BadProof))
        );
        assert_eq!(a.failures(DEV), 1);
        assert_eq!(a.session(s.id).unwrap().state, SessionState::Failed(FailReason::BadProof));
    }

    #[test]
    fn expired_session_cannot_progress() {
        let (mut a, mut rng) = setup();
        let s = a.begin(SVC, DEV, 0).unwrap();
        let (proof, nr) = respond(DEV, &[2; 32], &s.nonce_i, &mut rng);
        assert_eq!(
            a.verify(s.id, Role::Responder, &proof, Some(nr), 51),
            Err(AuthError::Failed(s.id, FailReason::Expired))
        );
        assert_eq!(
            a.respond(s.id, &[2; 32], 52),
            Err(AuthError::Failed(s.id, FailReason::Expired))
        );
    }

    #[test]
    fn revoked_principal_refused() {
        let (mut a, _) = setup();
        a.revoke(SVC);
        assert_eq!(a.begin(SVC, DEV, 0), Err(AuthError::Revoked(SVC)));
    }

    #[test]
    fn reused_counter_nonce_is_replay() {
        let (mut a, mut rng) = setup();
        let s1 = a.begin(SVC, DEV, 0).unwrap();
        let (p1, nr) = respond(DEV, &[2; 32], &s1.nonce_i, &mut rng);
        a.verify(s1.id, Role::Responder, &p1, Some(nr), 1).unwrap();
        let s2 = a.begin(SVC, DEV, 2).unwrap();
        let p2 = compute_proof(&[2; 32], &s2.nonce_i, DEV);
        assert_eq!(
            a.verify(s2.id, Role::Responder, &p2, Some(nr), 3),
            Err(AuthError::Failed(s2.id, FailReason::Replay))
        );
    }

    #[test]
    fn frame_roundtrip() {
        let f = AuthFrame {
            op: AuthOp::Response,
            principal: Principal::Service(7),
            session: 99,
            nonce: [4; 16],
            proof: [5; 32],
        };
        assert_eq!(AuthFrame::decode(&f.encode()), Some(f));
        assert_eq!(AuthFrame::decode(&f.encode()[1..]), None);
    }
}
