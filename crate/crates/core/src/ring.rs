//! Arithmetic in Z_{2^t} with a two's-complement fixed-point reading.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two servers holds a share.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Server1,
    Server2,
}

impl Role {
    pub fn index(self) -> u8 {
        match self {
            Role::Server1 => 1,
            Role::Server2 => 2,
        }
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Role::Server1),
            2 => Ok(Role::Server2),
            other => Err(Error::Params(format!("role must be 1 or 2, got {other}"))),
        }
    }

    pub fn peer(self) -> Self {
        match self {
            Role::Server1 => Role::Server2,
            Role::Server2 => Role::Server1,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index())
    }
}

/// An element of Z_{2^t}. The limb is always reduced below 2^t.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(transparent)]
pub struct RingValue(pub u64);

impl RingValue {
    pub const ZERO: RingValue = RingValue(0);

    #[inline]
    pub fn limb(self) -> u64 {
        self.0
    }
}

impl From<RingValue> for u64 {
    fn from(v: RingValue) -> u64 {
        v.0
    }
}

/// Ring width and fixed-point scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingParams {
    pub t: u32,
    pub f: u32,
}

impl Default for RingParams {
    fn default() -> Self {
        RingParams { t: 64, f: 13 }
    }
}

impl RingParams {
    pub fn new(t: u32, f: u32) -> Result<Self> {
        if !(1..=64).contains(&t) || f < 1 || f >= t {
            return Err(Error::Params(format!(
                "ring needs 1 <= f < t <= 64, got t={t} f={f}"
            )));
        }
        Ok(RingParams { t, f })
    }

    /// The 16-bit ring used for exhaustive and brute-force testing.
    pub fn miniature() -> Self {
        RingParams { t: 16, f: 4 }
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        if self.t == 64 {
            u64::MAX
        } else {
            (1u64 << self.t) - 1
        }
    }

    /// Bytes needed to store one limb.
    pub fn limb_bytes(&self) -> usize {
        self.t.div_ceil(8) as usize
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> RingValue {
        RingValue(x & self.mask())
    }

    #[inline]
    pub fn add(&self, a: RingValue, b: RingValue) -> RingValue {
        self.reduce(a.0.wrapping_add(b.0))
    }

    #[inline]
    pub fn sub(&self, a: RingValue, b: RingValue) -> RingValue {
        self.reduce(a.0.wrapping_sub(b.0))
    }

    #[inline]
    pub fn mul(&self, a: RingValue, b: RingValue) -> RingValue {
        self.reduce(a.0.wrapping_mul(b.0))
    }

    #[inline]
    pub fn neg(&self, a: RingValue) -> RingValue {
        self.reduce(a.0.wrapping_neg())
    }

    /// Two's-complement reading of a limb.
    #[inline]
    pub fn signed(&self, v: RingValue) -> i64 {
        if self.t == 64 {
            v.0 as i64
        } else if v.0 >> (self.t - 1) == 1 {
            (v.0 as i64) - (1i64 << self.t)
        } else {
            v.0 as i64
        }
    }

    #[inline]
    pub fn from_signed(&self, x: i64) -> RingValue {
        self.reduce(x as u64)
    }

    /// Largest magnitude accepted by [`RingParams::encode_fixed`].
    pub fn max_real(&self) -> f64 {
        2f64.powi(self.t as i32 - self.f as i32 - 1)
    }

    pub fn encode_fixed(&self, x: f64) -> Result<RingValue> {
        if !x.is_finite() || x.abs() >= self.max_real() {
            return Err(Error::Range(format!(
                "{x} outside fixed-point range (|x| < {}) for t={} f={}",
                self.max_real(),
                self.t,
                self.f
            )));
        }
        let scaled = (x * (1u64 << self.f) as f64).round() as i64;
        Ok(self.from_signed(scaled))
    }

    pub fn decode_fixed(&self, v: RingValue) -> f64 {
        self.signed(v) as f64 / (1u64 << self.f) as f64
    }

    /// One unit in the last place, in real terms.
    pub fn ulp(&self) -> f64 {
        1.0 / (1u64 << self.f) as f64
    }

    /// Plaintext arithmetic shift: floor(signed(v) / 2^bits).
    #[inline]
    pub fn shift_floor(&self, v: RingValue, bits: u32) -> RingValue {
        if bits == 0 {
            return v;
        }
        self.from_signed(self.signed(v) >> bits)
    }

    /// Local truncation of one additive share by `bits`.
    ///
    /// Server 1 shifts its share down; server 2 shifts the negation of its
    /// share and negates back. The pair reconstructs to floor(x / 2^bits)
    /// up to one unit, except with probability about |x| / 2^t.
    #[inline]
    pub fn truncate_share(&self, s: RingValue, role: Role, bits: u32) -> RingValue {
        if bits == 0 {
            return s;
        }
        match role {
            Role::Server1 => RingValue(s.0 >> bits),
            Role::Server2 => {
                let neg = self.neg(s).0 >> bits;
                self.neg(RingValue(neg))
            }
        }
    }

    pub fn truncate_slice(&self, shares: &mut [RingValue], role: Role, bits: u32) {
        for s in shares.iter_mut() {
            *s = self.truncate_share(*s, role, bits);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn encode_examples() {
        let p = RingParams::default();
        assert_eq!(p.encode_fixed(1.0).unwrap(), RingValue(8192));
        assert_eq!(p.encode_fixed(0.0).unwrap(), RingValue(0));
        assert_eq!(
            p.encode_fixed(-1.0).unwrap(),
            RingValue(0u64.wrapping_sub(8192))
        );
    }

    #[test]
    fn decode_examples() {
        let p = RingParams::default();
        assert_eq!(p.decode_fixed(RingValue(8192)), 1.0);
        assert_eq!(p.decode_fixed(RingValue(0u64.wrapping_sub(8192))), -1.0);
        assert_eq!(p.decode_fixed(RingValue(4096)), 0.5);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let p = RingParams::default();
        assert!(matches!(p.encode_fixed(2f64.powi(50)), Err(Error::Range(_))));
        assert!(p.encode_fixed(f64::NAN).is_err());
        let m = RingParams::miniature();
        assert!(m.encode_fixed(2048.0).is_err());
        assert!(m.encode_fixed(2047.0).is_ok());
    }

    #[test]
    fn params_validation() {
        assert!(RingParams::new(64, 13).is_ok());
        assert!(RingParams::new(65, 13).is_err());
        assert!(RingParams::new(16, 16).is_err());
        assert!(RingParams::new(16, 0).is_err());
    }

    #[test]
    fn truncation_of_large_power_of_two() {
        // x = 2^26, f = 13: expect 2^13 ± 1 over 10^5 random splits.
        let p = RingParams::default();
        let mut rng = Seed::from_u64(1).rng();
        let x = RingValue(1 << 26);
        let mut off = 0usize;
        for _ in 0..100_000 {
            let s1 = RingValue(rng.gen());
            let s2 = p.sub(x, s1);
            let t1 = p.truncate_share(s1, Role::Server1, 13);
            let t2 = p.truncate_share(s2, Role::Server2, 13);
            let got = p.signed(p.add(t1, t2));
            if (got - 8192).abs() > 1 {
                off += 1;
            }
        }
        assert_eq!(off, 0);
    }

    #[test]
    fn truncation_with_zero_second_share_is_exact() {
        let p = RingParams::default();
        for x in [0u64, 1, 8191, 8192, 123_456_789, 1 << 40] {
            let t1 = p.truncate_share(RingValue(x), Role::Server1, 13);
            let t2 = p.truncate_share(RingValue(0), Role::Server2, 13);
            assert_eq!(p.add(t1, t2), RingValue(x >> 13));
        }
    }

    #[test]
    fn truncation_of_zero_exhaustive_miniature() {
        let p = RingParams::miniature();
        for r in 0..(1u64 << 16) {
            let s1 = RingValue(r);
            let s2 = p.neg(s1);
            let got = p.signed(p.add(
                p.truncate_share(s1, Role::Server1, p.f),
                p.truncate_share(s2, Role::Server2, p.f),
            ));
            assert!(got.abs() <= 1, "r={r} got {got}");
        }
    }

    #[test]
    fn truncation_error_rate_within_bound() {
        // |x| < 2^40 at t = 64: the bad-wrap probability is at most 2^-23,
        // so 10^5 trials must be (essentially) clean.
        let p = RingParams::default();
        let mut rng = Seed::from_u64(2).rng();
        let trials = 100_000u64;
        let mut bad = 0u64;
        for _ in 0..trials {
            let x: i64 = rng.gen_range(-(1i64 << 40) + 1..(1i64 << 40));
            let xv = p.from_signed(x);
            let s1 = RingValue(rng.gen());
            let s2 = p.sub(xv, s1);
            let got = p.signed(p.add(
                p.truncate_share(s1, Role::Server1, p.f),
                p.truncate_share(s2, Role::Server2, p.f),
            ));
            if (got - (x >> p.f)).abs() > 1 {
                bad += 1;
            }
        }
        assert!((bad as f64) / (trials as f64) <= 2f64.powi(-22));
    }

    #[test]
    fn miniature_ring_laws() {
        let p = RingParams::miniature();
        let mut rng = Seed::from_u64(3).rng();
        for _ in 0..10_000 {
            let a = p.reduce(rng.gen());
            let b = p.reduce(rng.gen());
            let c = p.reduce(rng.gen());
            assert_eq!(p.add(p.add(a, b), c), p.add(a, p.add(b, c)));
            assert_eq!(p.mul(p.mul(a, b), c), p.mul(a, p.mul(b, c)));
            assert_eq!(p.add(a, b), p.add(b, a));
            assert_eq!(p.mul(a, b), p.mul(b, a));
            assert_eq!(p.mul(a, p.add(b, c)), p.add(p.mul(a, b), p.mul(a, c)));
        }
    }

    #[test]
    fn encode_is_injective_on_miniature_grid() {
        let p = RingParams::miniature();
        let mut seen = std::collections::HashSet::new();
        let step = p.ulp();
        let mut x = -p.max_real() + step;
        while x < p.max_real() {
            assert!(seen.insert(p.encode_fixed(x).unwrap()));
            x += step;
        }
    }

    proptest! {
        #[test]
        fn encoded_addition_is_exact(a in -1.0e6f64..1.0e6, b in -1.0e6f64..1.0e6) {
            let p = RingParams::default();
            let ea = p.encode_fixed(a).unwrap();
            let eb = p.encode_fixed(b).unwrap();
            let sum = p.decode_fixed(p.add(ea, eb));
            let expect = p.decode_fixed(ea) + p.decode_fixed(eb);
            prop_assert_eq!(sum, expect);
        }

        #[test]
        fn decode_encode_within_half_ulp(x in -1.0e9f64..1.0e9) {
            let p = RingParams::default();
            let back = p.decode_fixed(p.encode_fixed(x).unwrap());
            prop_assert!((back - x).abs() <= p.ulp() / 2.0 + 1e-9);
        }
    }
}
