//! Short-Weierstrass elliptic curves over prime fields: group law, scalar
//! multiplication, ECDH key agreement and Schnorr signatures.
//!
//! Arithmetic is variable-time. That is acceptable for a simulator and is
//! not meant for production key material.

mod uint;

use std::fmt;
use std::sync::OnceLock;

use rand::RngCore;
use thiserror::Error;

use crate::hash::sha256;

pub use uint::{Modulus, U256};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EccError {
    #[error("point is not on curve {0}")]
    OffCurve(String),
    #[error("shared secret is the point at infinity")]
    InfiniteSharedSecret,
    #[error("peer point is the point at infinity")]
    InfinitePeer,
    #[error("malformed point encoding")]
    BadEncoding,
    #[error("scalar out of range")]
    BadScalar,
    #[error("invalid curve parameters: {0}")]
    BadCurve(&'static str),
}

/// Affine point or the point at infinity, coordinates canonical mod p.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurvePoint {
    Infinity,
    Affine { x: U256, y: U256 },
}

impl CurvePoint {
    pub fn is_infinity(&self) -> bool {
        matches!(self, CurvePoint::Infinity)
    }
}

impl fmt::Debug for CurvePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurvePoint::Infinity => write!(f, "O"),
            CurvePoint::Affine { x, y } => write!(f, "({x}, {y})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CurveProfile {
    /// `y^2 = x^3 + 2x + 2 mod 17`, 19 points. Small enough to enumerate.
    Toy,
    P192,
    P256,
}

impl CurveProfile {
    pub fn name(&self) -> &'static str {
        match self {
            CurveProfile::Toy => "toy17",
            CurveProfile::P192 => "p192",
            CurveProfile::P256 => "p256",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "toy17" | "toy" => Some(CurveProfile::Toy),
            "p192" => Some(CurveProfile::P192),
            "p256" => Some(CurveProfile::P256),
            _ => None,
        }
    }
}

/// Jacobian coordinates in Montgomery form; `z == 0` encodes infinity.
#[derive(Clone, Copy)]
struct Jacobian {
    x: U256,
    y: U256,
    z: U256,
}

pub struct Curve {
    name: &'static str,
    field: Modulus,
    order: Modulus,
    a: U256,
    b: U256,
    a_m: U256,
    b_m: U256,
    generator: CurvePoint,
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Curve")
            .field("name", &self.name)
            .field("p", self.field.value())
            .field("n", self.order.value())
            .finish()
    }
}

impl Curve {
    /// Validates and builds a curve: non-singular, generator on the curve and
    /// `n·G = O`.
    pub fn new(
        name: &'static str,
        p: U256,
        a: U256,
        b: U256,
        g: (U256, U256),
        n: U256,
    ) -> Result<Self, EccError> {
        let field = Modulus::new(p).ok_or(EccError::BadCurve("field modulus must be odd"))?;
        let order = Modulus::new(n).ok_or(EccError::BadCurve("order must be odd"))?;
        if a >= p || b >= p || g.0 >= p || g.1 >= p {
            return Err(EccError::BadCurve("coefficient not reduced"));
        }
        let a3 = field.mul_plain(&field.mul_plain(&a, &a), &a);
        let b2 = field.mul_plain(&b, &b);
        let disc = field.add(
            &field.mul_plain(&U256::from_u64(4), &a3),
            &field.mul_plain(&U256::from_u64(27), &b2),
        );
        if disc.is_zero() {
            return Err(EccError::BadCurve("singular curve"));
        }
        let curve = Curve {
            name,
            a_m: field.to_mont(&a),
            b_m: field.to_mont(&b),
            field,
            order,
            a,
            b,
            generator: CurvePoint::Affine { x: g.0, y: g.1 },
        };
        if !curve.is_on_curve(&curve.generator) {
            return Err(EccError::BadCurve("generator not on curve"));
        }
        if !curve.mul_unchecked(&n, &curve.generator).is_infinity() {
            return Err(EccError::BadCurve("n·G is not the identity"));
        }
        Ok(curve)
    }

    pub fn named(profile: CurveProfile) -> &'static Curve {
        static TOY: OnceLock<Curve> = OnceLock::new();
        static P192: OnceLock<Curve> = OnceLock::new();
        static P256: OnceLock<Curve> = OnceLock::new();
        let h = |s: &str| U256::from_hex(s).expect("constant");
        match profile {
            CurveProfile::Toy => TOY.get_or_init(|| {
                Curve::new(
                    "toy17",
                    U256::from_u64(17),
                    U256::from_u64(2),
                    U256::from_u64(2),
                    (U256::from_u64(5), U256::from_u64(1)),
                    U256::from_u64(19),
                )
                .expect("toy curve")
            }),
            CurveProfile::P192 => P192.get_or_init(|| {
                Curve::new(
                    "p192",
                    h("fffffffffffffffffffffffffffffffeffffffffffffffff"),
                    h("fffffffffffffffffffffffffffffffefffffffffffffffc"),
                    h("64210519e59c80e70fa7e9ab72243049feb8deecc146b9b1"),
                    (
                        h("188da80eb03090f67cbf20eb43a18800f4ff0afd82ff1012"),
                        h("07192b95ffc8da78631011ed6b24cdd573f977a11e794811"),
                    ),
                    h("ffffffffffffffffffffffff99def836146bc9b1b4d22831"),
                )
                .expect("p192")
            }),
            CurveProfile::P256 => P256.get_or_init(|| {
                Curve::new(
                    "p256",
                    h("ffffffff00000001000000000000000000000000ffffffffffffffffffffffff"),
                    h("ffffffff00000001000000000000000000000000fffffffffffffffffffffffc"),
                    h("5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b"),
                    (
                        h("6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296"),
                        h("4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5"),
                    ),
                    h("ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551"),
                )
                .expect("p256")
            }),
        }
    }

    pub fn toy() -> &'static Curve {
        Curve::named(CurveProfile::Toy)
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn p(&self) -> &U256 {
        self.field.value()
    }

    pub fn a(&self) -> &U256 {
        &self.a
    }

    pub fn b(&self) -> &U256 {
        &self.b
    }

    pub fn order(&self) -> &U256 {
        self.order.value()
    }

    pub fn generator(&self) -> CurvePoint {
        self.generator
    }

    /// Width of one field element in bytes.
    pub fn field_len(&self) -> usize {
        self.field.byte_len()
    }

    /// Width of one scalar in bytes.
    pub fn scalar_len(&self) -> usize {
        self.order.byte_len()
    }

    /// Length of a non-infinity point encoding.
    pub fn point_len(&self) -> usize {
        1 + 2 * self.field_len()
    }

    pub fn scalar_field(&self) -> &Modulus {
        &self.order
    }

    pub fn is_on_curve(&self, pt: &CurvePoint) -> bool {
        match pt {
            CurvePoint::Infinity => true,
            CurvePoint::Affine { x, y } => {
                let p = self.p();
                if x >= p || y >= p {
                    return false;
                }
                let f = &self.field;
                let xm = f.to_mont(x);
                let ym = f.to_mont(y);
                let lhs = f.square(&ym);
                let x3 = f.mul(&f.square(&xm), &xm);
                let rhs = f.add(&f.add(&x3, &f.mul(&self.a_m, &xm)), &self.b_m);
                lhs == rhs
            }
        }
    }

    fn check(&self, pt: &CurvePoint) -> Result<(), EccError> {
        if self.is_on_curve(pt) {
            Ok(())
        } else {
            Err(EccError::OffCurve(self.name.to_string()))
        }
    }

    pub fn negate(&self, pt: &CurvePoint) -> CurvePoint {
        match pt {
            CurvePoint::Infinity => CurvePoint::Infinity,
            CurvePoint::Affine { x, y } => CurvePoint::Affine {
                x: *x,
                y: self.field.neg(y),
            },
        }
    }

    /// Affine group law with the identity and inverse cases.
    pub fn point_add(&self, p: &CurvePoint, q: &CurvePoint) -> Result<CurvePoint, EccError> {
        self.check(p)?;
        self.check(q)?;
        Ok(self.add_affine(p, q))
    }

    fn add_affine(&self, p: &CurvePoint, q: &CurvePoint) -> CurvePoint {
        let (x1, y1, x2, y2) = match (p, q) {
            (CurvePoint::Infinity, _) => return *q,
            (_, CurvePoint::Infinity) => return *p,
            (CurvePoint::Affine { x: x1, y: y1 }, CurvePoint::Affine { x: x2, y: y2 }) => {
                (x1, y1, x2, y2)
            }
        };
        let f = &self.field;
        let (x1, y1, x2, y2) = (f.to_mont(x1), f.to_mont(y1), f.to_mont(x2), f.to_mont(y2));
        let lambda = if x1 == x2 {
            if f.add(&y1, &y2).is_zero() {
                return CurvePoint::Infinity;
            }
            // (3x^2 + a) / 2y
            let x1sq = f.square(&x1);
            let num = f.add(&f.add(&f.add(&x1sq, &x1sq), &x1sq), &self.a_m);
            let den = f.add(&y1, &y1);
            f.mul(&num, &f.inv(&den))
        } else {
            let num = f.sub(&y2, &y1);
            let den = f.sub(&x2, &x1);
            f.mul(&num, &f.inv(&den))
        };
        let x3 = f.sub(&f.sub(&f.square(&lambda), &x1), &x2);
        let y3 = f.sub(&f.mul(&lambda, &f.sub(&x1, &x3)), &y1);
        CurvePoint::Affine {
            x: f.from_mont(&x3),
            y: f.from_mont(&y3),
        }
    }

    /// `k·P` for any non-negative `k`, by fixed-window double-and-add.
    pub fn scalar_mul(&self, k: &U256, pt: &CurvePoint) -> Result<CurvePoint, EccError> {
        self.check(pt)?;
        Ok(self.mul_unchecked(k, pt))
    }

    pub fn mul_base(&self, k: &U256) -> CurvePoint {
        self.mul_unchecked(k, &self.generator)
    }

    fn to_jacobian(&self, pt: &CurvePoint) -> Jacobian {
        match pt {
            CurvePoint::Infinity => Jacobian {
                x: self.field.mont_one(),
                y: self.field.mont_one(),
                z: U256::ZERO,
            },
            CurvePoint::Affine { x, y } => Jacobian {
                x: self.field.to_mont(x),
                y: self.field.to_mont(y),
                z: self.field.mont_one(),
            },
        }
    }

    fn to_affine(&self, pt: &Jacobian) -> CurvePoint {
        if pt.z.is_zero() {
            return CurvePoint::Infinity;
        }
        let f = &self.field;
        let zinv = f.inv(&pt.z);
        let zinv2 = f.square(&zinv);
        let zinv3 = f.mul(&zinv2, &zinv);
        CurvePoint::Affine {
            x: f.from_mont(&f.mul(&pt.x, &zinv2)),
            y: f.from_mont(&f.mul(&pt.y, &zinv3)),
        }
    }

    fn jac_double(&self, pt: &Jacobian) -> Jacobian {
        let f = &self.field;
        if pt.z.is_zero() || pt.y.is_zero() {
            return Jacobian { z: U256::ZERO, ..*pt };
        }
        let ysq = f.square(&pt.y);
        let xy2 = f.mul(&pt.x, &ysq);
        let s = f.add(&f.add(&xy2, &xy2), &f.add(&xy2, &xy2));
        let xsq = f.square(&pt.x);
        let zsq = f.square(&pt.z);
        let z4 = f.square(&zsq);
        let m = f.add(&f.add(&f.add(&xsq, &xsq), &xsq), &f.mul(&self.a_m, &z4));
        let x3 = f.sub(&f.square(&m), &f.add(&s, &s));
        let y4 = f.square(&ysq);
        let y4_2 = f.add(&y4, &y4);
        let y4_4 = f.add(&y4_2, &y4_2);
        let y4_8 = f.add(&y4_4, &y4_4);
        let y3 = f.sub(&f.mul(&m, &f.sub(&s, &x3)), &y4_8);
        let yz = f.mul(&pt.y, &pt.z);
        let z3 = f.add(&yz, &yz);
        Jacobian { x: x3, y: y3, z: z3 }
    }

    fn jac_add(&self, p: &Jacobian, q: &Jacobian) -> Jacobian {
        if p.z.is_zero() {
            return *q;
        }
        if q.z.is_zero() {
            return *p;
        }
        let f = &self.field;
        let z1sq = f.square(&p.z);
        let z2sq = f.square(&q.z);
        let u1 = f.mul(&p.x, &z2sq);
        let u2 = f.mul(&q.x, &z1sq);
        let s1 = f.mul(&p.y, &f.mul(&z2sq, &q.z));
        let s2 = f.mul(&q.y, &f.mul(&z1sq, &p.z));
        if u1 == u2 {
            if s1 == s2 {
                return self.jac_double(p);
            }
            return Jacobian { z: U256::ZERO, ..*p };
        }
        let h = f.sub(&u2, &u1);
        let r = f.sub(&s2, &s1);
        let h2 = f.square(&h);
        let h3 = f.mul(&h2, &h);
        let u1h2 = f.mul(&u1, &h2);
        let x3 = f.sub(&f.sub(&f.square(&r), &h3), &f.add(&u1h2, &u1h2));
        let y3 = f.sub(&f.mul(&r, &f.sub(&u1h2, &x3)), &f.mul(&s1, &h3));
        let z3 = f.mul(&h, &f.mul(&p.z, &q.z));
        Jacobian { x: x3, y: y3, z: z3 }
    }

    fn mul_unchecked(&self, k: &U256, pt: &CurvePoint) -> CurvePoint {
        const W: usize = 4;
        if k.is_zero() || pt.is_infinity() {
            return CurvePoint::Infinity;
        }
        let base = self.to_jacobian(pt);
        let mut table = Vec::with_capacity(1 << W);
        table.push(self.to_jacobian(&CurvePoint::Infinity));
        table.push(base);
        for i in 2..(1 << W) {
            let next = self.jac_add(&table[i - 1], &base);
            table.push(next);
        }
        let nbits = k.bits();
        let windows = nbits.div_ceil(W);
        let mut acc = table[0];
        for w in (0..windows).rev() {
            for _ in 0..W {
                acc = self.jac_double(&acc);
            }
            let mut digit = 0usize;
            for b in (0..W).rev() {
                let idx = w * W + b;
                digit = (digit << 1) | (idx < 256 && k.bit(idx)) as usize;
            }
            if digit != 0 {
                acc = self.jac_add(&acc, &table[digit]);
            }
        }
        self.to_affine(&acc)
    }

    /// `0x00` for infinity, otherwise `0x04 || x || y` at fixed field width.
    pub fn encode_point(&self, pt: &CurvePoint) -> Vec<u8> {
        match pt {
            CurvePoint::Infinity => vec![0x00],
            CurvePoint::Affine { x, y } => {
                let w = self.field_len();
                let mut out = Vec::with_capacity(1 + 2 * w);
                out.push(0x04);
                out.extend_from_slice(&x.to_be_fixed(w));
                out.extend_from_slice(&y.to_be_fixed(w));
                out
            }
        }
    }

    /// Inverse of [`Curve::encode_point`]; rejects off-curve points.
    pub fn decode_point(&self, bytes: &[u8]) -> Result<CurvePoint, EccError> {
        let w = self.field_len();
        let pt = match bytes {
            [0x00] => CurvePoint::Infinity,
            [0x04, rest @ ..] if rest.len() == 2 * w => CurvePoint::Affine {
                x: U256::from_be_slice(&rest[..w]).ok_or(EccError::BadEncoding)?,
                y: U256::from_be_slice(&rest[w..]).ok_or(EccError::BadEncoding)?,
            },
            _ => return Err(EccError::BadEncoding),
        };
        self.check(&pt)?;
        Ok(pt)
    }

    pub fn encode_scalar(&self, s: &U256) -> Vec<u8> {
        s.to_be_fixed(self.scalar_len())
    }

    pub fn decode_scalar(&self, bytes: &[u8]) -> Result<U256, EccError> {
        if bytes.len() != self.scalar_len() {
            return Err(EccError::BadEncoding);
        }
        let s = U256::from_be_slice(bytes).ok_or(EccError::BadEncoding)?;
        if s >= *self.order() {
            return Err(EccError::BadScalar);
        }
        Ok(s)
    }

    /// Reduces a digest to a scalar mod n.
    pub fn hash_to_scalar(&self, parts: &[&[u8]]) -> U256 {
        let d = sha256(parts);
        self.order.reduce(&U256::from_be_slice(&d).expect("32 bytes"))
    }

    /// Uniform scalar in `[1, n-1]`.
    pub fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> U256 {
        self.order.random_nonzero(rng)
    }
}

/// Secret scalar. Its `Debug` output never shows the value.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretScalar(U256);

impl SecretScalar {
    pub fn new(curve: &Curve, k: U256) -> Result<Self, EccError> {
        if k.is_zero() || k >= *curve.order() {
            return Err(EccError::BadScalar);
        }
        Ok(SecretScalar(k))
    }

    pub fn expose(&self) -> &U256 {
        &self.0
    }
}

impl fmt::Debug for SecretScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretScalar(<redacted>)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    secret: SecretScalar,
    public: CurvePoint,
}

impl KeyPair {
    pub fn generate<R: RngCore + ?Sized>(curve: &Curve, rng: &mut R) -> Self {
        let k = curve.random_scalar(rng);
        KeyPair {
            public: curve.mul_base(&k),
            secret: SecretScalar(k),
        }
    }

    pub fn from_secret(curve: &Curve, secret: U256) -> Result<Self, EccError> {
        let secret = SecretScalar::new(curve, secret)?;
        Ok(KeyPair {
            public: curve.mul_base(secret.expose()),
            secret,
        })
    }

    pub fn secret(&self) -> &SecretScalar {
        &self.secret
    }

    pub fn public(&self) -> &CurvePoint {
        &self.public
    }
}

/// Symmetric key derived from an ECDH shared point.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SharedKey(pub [u8; 32]);

impl fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SharedKey({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

impl SharedKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

/// Shared point `secret·peer`; the key is SHA-256 of its fixed-width
/// big-endian x-coordinate.
pub fn derive_shared(
    curve: &Curve,
    secret: &SecretScalar,
    peer: &CurvePoint,
) -> Result<SharedKey, EccError> {
    if peer.is_infinity() {
        return Err(EccError::InfinitePeer);
    }
    let shared = curve.scalar_mul(secret.expose(), peer)?;
    match shared {
        CurvePoint::Infinity => Err(EccError::InfiniteSharedSecret),
        CurvePoint::Affine { x, .. } => {
            Ok(SharedKey(sha256(&[&x.to_be_fixed(curve.field_len())])))
        }
    }
}

/// Schnorr signature `(e, s)` with `R = s·G - e·P` and
/// `e = H(R || P || msg) mod n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Signature {
    pub e: U256,
    pub s: U256,
}

impl Signature {
    pub fn encode(&self, curve: &Curve) -> Vec<u8> {
        let mut out = curve.encode_scalar(&self.e);
        out.extend(curve.encode_scalar(&self.s));
        out
    }

    pub fn decode(curve: &Curve, bytes: &[u8]) -> Result<Self, EccError> {
        let w = curve.scalar_len();
        if bytes.len() != 2 * w {
            return Err(EccError::BadEncoding);
        }
        Ok(Signature {
            e: curve.decode_scalar(&bytes[..w])?,
            s: curve.decode_scalar(&bytes[w..])?,
        })
    }
}

/// Deterministic-nonce Schnorr signature.
pub fn sign(curve: &Curve, key: &KeyPair, msg: &[u8]) -> Signature {
    let n = curve.scalar_field();
    let secret_bytes = curve.encode_scalar(key.secret.expose());
    let pub_enc = curve.encode_point(&key.public);
    let mut counter: u32 = 0;
    loop {
        let k = curve.hash_to_scalar(&[b"nonce", &secret_bytes, msg, &counter.to_be_bytes()]);
        counter += 1;
        if k.is_zero() {
            continue;
        }
        let r = curve.mul_base(&k);
        let e = curve.hash_to_scalar(&[&curve.encode_point(&r), &pub_enc, msg]);
        let ex = n.mul_plain(&e, key.secret.expose());
        let s = n.add(&k, &ex);
        return Signature { e, s };
    }
}

pub fn verify(curve: &Curve, public: &CurvePoint, msg: &[u8], sig: &Signature) -> bool {
    if public.is_infinity() || !curve.is_on_curve(public) {
        return false;
    }
    let n = curve.order();
    if sig.e >= *n || sig.s >= *n {
        return false;
    }
    let sg = curve.mul_base(&sig.s);
    let neg_e = curve.scalar_field().neg(&sig.e);
    let ep = curve.mul_unchecked(&neg_e, public);
    let r = curve.add_affine(&sg, &ep);
    if r.is_infinity() {
        return false;
    }
    let e = curve.hash_to_scalar(&[&curve.encode_point(&r), &curve.encode_point(public), msg]);
    e == sig.e
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(x: u64, y: u64) -> CurvePoint {
        CurvePoint::Affine {
            x: U256::from_u64(x),
            y: U256::from_u64(y),
        }
    }

    #[test]
    fn named_curves_validate() {
        for profile in [CurveProfile::Toy, CurveProfile::P192, CurveProfile::P256] {
            let c = Curve::named(profile);
            assert!(c.is_on_curve(&c.generator()));
            assert!(c.mul_base(c.order()).is_infinity());
        }
    }

    #[test]
    fn singular_curve_rejected() {
        // y^2 = x^3 mod 17 is singular.
        let err = Curve::new(
            "bad",
            U256::from_u64(17),
            U256::ZERO,
            U256::ZERO,
            (U256::from_u64(1), U256::from_u64(1)),
            U256::from_u64(19),
        )
        .unwrap_err();
        assert_eq!(err, EccError::BadCurve("singular curve"));
    }

    #[test]
    fn toy_small_multiples() {
        let c = Curve::toy();
        let g = c.generator();
        assert_eq!(c.scalar_mul(&U256::from_u64(2), &g).unwrap(), pt(6, 3));
        assert_eq!(c.scalar_mul(&U256::from_u64(3), &g).unwrap(), pt(10, 6));
        assert_eq!(c.point_add(&pt(6, 3), &pt(5, 1)).unwrap(), pt(10, 6));
    }

    #[test]
    fn identity_and_inverse() {
        let c = Curve::toy();
        let g = c.generator();
        assert_eq!(c.point_add(&g, &CurvePoint::Infinity).unwrap(), g);
        assert_eq!(c.point_add(&g, &c.negate(&g)).unwrap(), CurvePoint::Infinity);
        assert_eq!(c.scalar_mul(&U256::ZERO, &g).unwrap(), CurvePoint::Infinity);
        assert_eq!(c.scalar_mul(&U256::ONE, &g).unwrap(), g);
    }

    #[test]
    fn off_curve_inputs_rejected() {
        let c = Curve::toy();
        let bad = pt(1, 1);
        assert!(matches!(c.point_add(&bad, &c.generator()), Err(EccError::OffCurve(_))));
        assert!(matches!(c.scalar_mul(&U256::from_u64(3), &bad), Err(EccError::OffCurve(_))));
        assert!(c.decode_point(&[0x04, 1, 1]).is_err());
    }

    #[test]
    fn point_encoding_roundtrip() {
        let c = Curve::named(CurveProfile::P192);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kp = KeyPair::generate(c, &mut rng);
        let enc = c.encode_point(kp.public());
        assert_eq!(enc.len(), 49);
        assert_eq!(enc[0], 0x04);
        assert_eq!(c.decode_point(&enc).unwrap(), *kp.public());
        assert_eq!(c.encode_point(&CurvePoint::Infinity), vec![0x00]);
        assert_eq!(c.decode_point(&[0x00]).unwrap(), CurvePoint::Infinity);
    }

    #[test]
    fn jacobian_matches_affine_chain_p192() {
        let c = Curve::named(CurveProfile::P192);
        let g = c.generator();
        let mut acc = CurvePoint::Infinity;
        for k in 0..40u64 {
            assert_eq!(c.mul_base(&U256::from_u64(k)), acc, "k={k}");
            acc = c.point_add(&acc, &g).unwrap();
        }
    }

    #[test]
    fn ecdh_rejects_infinity_peer() {
        let c = Curve::toy();
        let kp = KeyPair::from_secret(c, U256::from_u64(3)).unwrap();
        assert_eq!(
            derive_shared(c, kp.secret(), &CurvePoint::Infinity),
            Err(EccError::InfinitePeer)
        );
    }

    #[test]
    fn ecdh_toy_three_nine() {
        let c = Curve::toy();
        let f = KeyPair::from_secret(c, U256::from_u64(3)).unwrap();
        let g = KeyPair::from_secret(c, U256::from_u64(9)).unwrap();
        let k1 = derive_shared(c, f.secret(), g.public()).unwrap();
        let k2 = derive_shared(c, g.secret(), f.public()).unwrap();
        assert_eq!(k1, k2);
        // 27·G = 8·G on a group of order 19.
        let p27 = c.mul_base(&U256::from_u64(27));
        let CurvePoint::Affine { x, .. } = p27 else { panic!() };
        assert_eq!(k1.0, sha256(&[&x.to_be_fixed(1)]));
    }

    #[test]
    fn schnorr_sign_verify() {
        let c = Curve::named(CurveProfile::P192);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kp = KeyPair::generate(c, &mut rng);
        let sig = sign(c, &kp, b"reading");
        assert!(verify(c, kp.public(), b"reading", &sig));
        assert!(!verify(c, kp.public(), b"readinh", &sig));
        let other = KeyPair::generate(c, &mut rng);
        assert!(!verify(c, other.public(), b"reading", &sig));
        let enc = sig.encode(c);
        assert_eq!(Signature::decode(c, &enc).unwrap(), sig);
    }

    #[test]
    fn secret_debug_is_redacted() {
        let c = Curve::toy();
        let kp = KeyPair::from_secret(c, U256::from_u64(5)).unwrap();
        assert!(!format!("{kp:?}").contains("0x5"));
    }
}
