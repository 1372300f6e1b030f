//! Fixed-width 256-bit unsigned integers and Montgomery arithmetic modulo an
//! odd modulus of at most 256 bits.

use std::cmp::Ordering;
use std::fmt;

use rand::RngCore;

/// 256-bit unsigned integer, little-endian 64-bit limbs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct U256(pub [u64; 4]);

impl U256 {
    pub const ZERO: U256 = U256([0; 4]);
    pub const ONE: U256 = U256([1, 0, 0, 0]);

    pub const fn from_u64(v: u64) -> Self {
        U256([v, 0, 0, 0])
    }

    /// Parses a big-endian hex string (no prefix, at most 64 digits).
    pub fn from_hex(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.is_empty() || s.len() > 64 || !s.bytes().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        let mut limbs = [0u64; 4];
        for (i, chunk) in s.as_bytes().rchunks(16).enumerate() {
            let text = std::str::from_utf8(chunk).ok()?;
            limbs[i] = u64::from_str_radix(text, 16).ok()?;
        }
        Some(U256(limbs))
    }

    /// Interprets up to 32 big-endian bytes.
    pub fn from_be_slice(bytes: &[u8]) -> Option<Self> {
        if bytes.len() > 32 {
            return None;
        }
        let mut buf = [0u8; 32];
        buf[32 - bytes.len()..].copy_from_slice(bytes);
        let mut limbs = [0u64; 4];
        for (i, limb) in limbs.iter_mut().enumerate() {
            let start = 32 - 8 * (i + 1);
            *limb = u64::from_be_bytes(buf[start..start + 8].try_into().unwrap());
        }
        Some(U256(limbs))
    }

    pub fn to_be_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (i, limb) in self.0.iter().enumerate() {
            let start = 32 - 8 * (i + 1);
            out[start..start + 8].copy_from_slice(&limb.to_be_bytes());
        }
        out
    }

    /// Big-endian encoding truncated or left-padded to `width` bytes.
    /// The caller guarantees the value fits.
    pub fn to_be_fixed(&self, width: usize) -> Vec<u8> {
        let full = self.to_be_bytes();
        full[32 - width..].to_vec()
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 4]
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn bits(&self) -> usize {
        for i in (0..4).rev() {
            if self.0[i] != 0 {
                return 64 * i + 64 - self.0[i].leading_zeros() as usize;
            }
        }
        0
    }

    /// Returns `self + rhs` and the carry out.
    pub fn adc(&self, rhs: &U256) -> (U256, bool) {
        let mut out = [0u64; 4];
        let mut carry = 0u128;
        for (i, slot) in out.iter_mut().enumerate() {
            let s = self.0[i] as u128 + rhs.0[i] as u128 + carry;
            *slot = s as u64;
            carry = s >> 64;
        }
        (U256(out), carry != 0)
    }

    /// Returns `self - rhs` and the borrow out.
    pub fn sbb(&self, rhs: &U256) -> (U256, bool) {
        let mut out = [0u64; 4];
        let mut borrow = false;
        for (i, slot) in out.iter_mut().enumerate() {
            let (d1, b1) = self.0[i].overflowing_sub(rhs.0[i]);
            let (d2, b2) = d1.overflowing_sub(borrow as u64);
            *slot = d2;
            borrow = b1 || b2;
        }
        (U256(out), borrow)
    }

    pub fn low_u64(&self) -> u64 {
        self.0[0]
    }
}

impl Ord for U256 {
    fn cmp(&self, other: &Self) -> Ordering {
        for i in (0..4).rev() {
            match self.0[i].cmp(&other.0[i]) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for U256 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for U256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self)
    }
}

impl fmt::Display for U256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut started = false;
        for limb in self.0.iter().rev() {
            if started {
                write!(f, "{:016x}", limb)?;
            } else if *limb != 0 {
                write!(f, "{:x}", limb)?;
                started = true;
            }
        }
        if !started {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Montgomery context for an odd modulus `m < 2^256`.
///
/// Values handed to `mul`/`square` are in Montgomery form (`x·R mod m`,
/// `R = 2^256`); `add`, `sub` and `neg` work in either representation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Modulus {
    m: U256,
    /// `-m^{-1} mod 2^64`
    inv: u64,
    /// `R^2 mod m`
    r2: U256,
    /// `R mod m`, the Montgomery form of one.
    one: U256,
    bits: usize,
}

impl Modulus {
    /// Builds the context. Returns `None` for even or trivial moduli.
    pub fn new(m: U256) -> Option<Self> {
        if m.0[0] & 1 == 0 || m <= U256::ONE {
            return None;
        }
        let mut x: u64 = 1;
        for _ in 0..6 {
            x = x.wrapping_mul(2u64.wrapping_sub(m.0[0].wrapping_mul(x)));
        }
        let inv = x.wrapping_neg();

        // R^2 mod m by 512 modular doublings of 1.
        let mut r2 = U256::ONE;
        for _ in 0..512 {
            r2 = Self::double_mod(&r2, &m);
        }
        let mut ctx = Modulus {
            m,
            inv,
            r2,
            one: U256::ZERO,
            bits: m.bits(),
        };
        ctx.one = ctx.to_mont(&U256::ONE);
        Some(ctx)
    }

    fn double_mod(a: &U256, m: &U256) -> U256 {
        let (d, carry) = a.adc(a);
        if carry || d >= *m {
            d.sbb(m).0
        } else {
            d
        }
    }

    pub fn value(&self) -> &U256 {
        &self.m
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Width of the modulus in bytes.
    pub fn byte_len(&self) -> usize {
        self.bits.div_ceil(8)
    }

    pub fn mont_one(&self) -> U256 {
        self.one
    }

    /// Montgomery product `a·b·R^{-1} mod m` (CIOS). Valid whenever
    /// `a·b < m·R`, in particular for any `a < 2^256` with `b < m`.
    pub fn mul(&self, a: &U256, b: &U256) -> U256 {
        let m = &self.m.0;
        let mut t = [0u64; 6];
        for i in 0..4 {
            let bi = b.0[i] as u128;
            let mut c = 0u128;
            for j in 0..4 {
                let s = t[j] as u128 + a.0[j] as u128 * bi + c;
                t[j] = s as u64;
                c = s >> 64;
            }
            let s = t[4] as u128 + c;
            t[4] = s as u64;
            t[5] = (s >> 64) as u64;

            let mu = t[0].wrapping_mul(self.inv) as u128;
            let s = t[0] as u128 + mu * m[0] as u128;
            let mut c = s >> 64;
            for j in 1..4 {
                let s = t[j] as u128 + mu * m[j] as u128 + c;
                t[j - 1] = s as u64;
                c = s >> 64;
            }
            let s = t[4] as u128 + c;
            t[3] = s as u64;
            t[4] = t[5] + (s >> 64) as u64;
            t[5] = 0;
        }
        let r = U256([t[0], t[1], t[2], t[3]]);
        if t[4] != 0 || r >= self.m {
            r.sbb(&self.m).0
        } else {
            r
        }
    }

    pub fn square(&self, a: &U256) -> U256 {
        self.mul(a, a)
    }

    pub fn add(&self, a: &U256, b: &U256) -> U256 {
        let (s, carry) = a.adc(b);
        if carry || s >= self.m {
            s.sbb(&self.m).0
        } else {
            s
        }
    }

    pub fn sub(&self, a: &U256, b: &U256) -> U256 {
        let (d, borrow) = a.sbb(b);
        if borrow {
            d.adc(&self.m).0
        } else {
            d
        }
    }

    pub fn neg(&self, a: &U256) -> U256 {
        if a.is_zero() {
            *a
        } else {
            self.m.sbb(a).0
        }
    }

    pub fn to_mont(&self, a: &U256) -> U256 {
        self.mul(a, &self.r2)
    }

    pub fn from_mont(&self, a: &U256) -> U256 {
        self.mul(a, &U256::ONE)
    }

    /// Canonical `a mod m` for any 256-bit `a`.
    pub fn reduce(&self, a: &U256) -> U256 {
        self.from_mont(&self.to_mont(a))
    }

    /// Montgomery-form exponentiation; `base` is in Montgomery form, the
    /// exponent is a plain integer.
    pub fn pow(&self, base: &U256, exp: &U256) -> U256 {
        let mut acc = self.one;
        for i in (0..exp.bits()).rev() {
            acc = self.square(&acc);
            if exp.bit(i) {
                acc = self.mul(&acc, base);
            }
        }
        acc
    }

    /// Inverse in Montgomery form via Fermat; the modulus must be prime.
    pub fn inv(&self, a: &U256) -> U256 {
        let e = self.m.sbb(&U256::from_u64(2)).0;
        self.pow(a, &e)
    }

    /// Canonical-domain helpers for code that does not keep values in
    /// Montgomery form.
    pub fn mul_plain(&self, a: &U256, b: &U256) -> U256 {
        self.from_mont(&self.mul(&self.to_mont(a), &self.to_mont(b)))
    }

    pub fn inv_plain(&self, a: &U256) -> U256 {
        self.from_mont(&self.inv(&self.to_mont(a)))
    }

    /// Uniform sample from `[1, m-1]` by rejection on masked random bytes.
    pub fn random_nonzero<R: RngCore + ?Sized>(&self, rng: &mut R) -> U256 {
        let len = self.byte_len();
        let top_bits = self.bits - 8 * (len - 1);
        let mask: u8 = if top_bits == 8 { 0xFF } else { (1u8 << top_bits) - 1 };
        let mut buf = vec![0u8; len];
        loop {
            rng.fill_bytes(&mut buf);
            buf[0] &= mask;
            let candidate = U256::from_be_slice(&buf).expect("width checked");
            if !candidate.is_zero() && candidate < self.m {
                return candidate;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(m: u64) -> Modulus {
        Modulus::new(U256::from_u64(m)).unwrap()
    }

    #[test]
    fn hex_roundtrip() {
        let h = "fffffffffffffffffffffffffffffffeffffffffffffffff";
        let v = U256::from_hex(h).unwrap();
        assert_eq!(v.to_string(), h);
        assert_eq!(v.bits(), 192);
        assert_eq!(U256::from_be_slice(&v.to_be_fixed(24)).unwrap(), v);
    }

    #[test]
    fn even_modulus_rejected() {
        assert!(Modulus::new(U256::from_u64(16)).is_none());
        assert!(Modulus::new(U256::ONE).is_none());
    }

    #[test]
    fn small_modulus_matches_u128() {
        for m in [17u64, 19, 97, 1_000_000_007, (1u64 << 61) - 1] {
            let ctx = small(m);
            for a in [0u64, 1, 2, 5, m - 1, m / 2, 12345 % m] {
                for b in [0u64, 1, 3, m - 1, 777 % m] {
                    let want = ((a as u128 * b as u128) % m as u128) as u64;
                    let got = ctx.mul_plain(&U256::from_u64(a), &U256::from_u64(b));
                    assert_eq!(got, U256::from_u64(want), "{a}*{b} mod {m}");
                    let sum = ((a as u128 + b as u128) % m as u128) as u64;
                    assert_eq!(ctx.add(&U256::from_u64(a), &U256::from_u64(b)), U256::from_u64(sum));
                }
            }
        }
    }

    #[test]
    fn inverse_small_prime() {
        let ctx = small(1_000_000_007);
        for a in [1u64, 2, 3, 999, 123_456_789] {
            let inv = ctx.inv_plain(&U256::from_u64(a));
            let prod = ctx.mul_plain(&inv, &U256::from_u64(a));
            assert_eq!(prod, U256::ONE);
        }
    }

    #[test]
    fn full_width_modulus_inverse() {
        // P-256 field prime uses all 256 bits.
        let p = U256::from_hex("ffffffff00000001000000000000000000000000ffffffffffffffffffffffff").unwrap();
        let ctx = Modulus::new(p).unwrap();
        let a = U256::from_hex("6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296").unwrap();
        let inv = ctx.inv_plain(&a);
        assert_eq!(ctx.mul_plain(&a, &inv), U256::ONE);
        let max = p.sbb(&U256::ONE).0;
        // (p-1)^2 = 1 mod p
        assert_eq!(ctx.mul_plain(&max, &max), U256::ONE);
    }

    #[test]
    fn reduce_wide_values() {
        let ctx = small(19);
        let all_ones = U256([u64::MAX; 4]);
        // 2^256 - 1 mod 19 computed via repeated doubling of 1.
        let mut r = 1u64;
        for _ in 0..256 {
            r = (r * 2) % 19;
        }
        let want = (r + 19 - 1) % 19;
        assert_eq!(ctx.reduce(&all_ones), U256::from_u64(want));
    }
}
