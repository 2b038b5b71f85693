//! Word-sized modular arithmetic and NTT-friendly prime search.

#[inline]
pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

#[inline]
pub fn add_mod(a: u64, b: u64, m: u64) -> u64 {
    let s = a + b;
    if s >= m {
        s - m
    } else {
        s
    }
}

#[inline]
pub fn sub_mod(a: u64, b: u64, m: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + m - b
    }
}

pub fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    r
}

/// Inverse of `a` modulo `m`, if it exists.
pub fn inv_mod(a: u64, m: u64) -> Option<u64> {
    let (mut old_r, mut r) = (a as i128 % m as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i128) as u64)
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'outer: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// The `count` largest primes `p < below` with `p ≡ 1 (mod step)`.
pub fn primes_congruent_one(below: u64, step: u64, count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = (below - 1) / step * step + 1;
    while c >= below {
        c -= step;
    }
    while out.len() < count && c > step {
        if is_prime(c) {
            out.push(c);
        }
        c -= step;
    }
    out
}

/// A primitive `order`-th root of unity modulo prime `p` (`order | p - 1`,
/// `order` a power of two). Deterministic: smallest generator candidate.
pub fn primitive_root_of_unity(p: u64, order: u64) -> Option<u64> {
    if (p - 1) % order != 0 {
        return None;
    }
    let cofactor = (p - 1) / order;
    (2..p.min(1 << 20)).find_map(|g| {
        let w = pow_mod(g, cofactor, p);
        (pow_mod(w, order / 2, p) == p - 1).then_some(w)
    })
}

/// Multiplication by a fixed operand with a precomputed quotient (Shoup).
/// Requires `p < 2^63`.
#[derive(Clone, Copy, Debug)]
pub struct ShoupMul {
    pub w: u64,
    pub w_shoup: u64,
}

impl ShoupMul {
    pub fn new(w: u64, p: u64) -> Self {
        ShoupMul {
            w,
            w_shoup: (((w as u128) << 64) / p as u128) as u64,
        }
    }

    #[inline(always)]
    pub fn mul(&self, x: u64, p: u64) -> u64 {
        let q = ((x as u128 * self.w_shoup as u128) >> 64) as u64;
        let r = x.wrapping_mul(self.w).wrapping_sub(q.wrapping_mul(p));
        if r >= p {
            r - p
        } else {
            r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_first_prime_is_ntt_friendly() {
        let p = 101_285_036_033u64;
        assert!(is_prime(p));
        assert_eq!(p % 8192, 1);
        assert!(primitive_root_of_unity(p, 8192).is_some());
    }

    #[test]
    fn primality_matches_trial_division() {
        let trial = |n: u64| n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0);
        for n in 0..20_000u64 {
            assert_eq!(is_prime(n), trial(n), "{n}");
        }
        assert!(!is_prime(3_215_031_751)); // strong pseudoprime to bases 2,3,5,7
        assert!(is_prime((1u64 << 61) - 1));
    }

    #[test]
    fn prime_search() {
        let ps = primes_congruent_one(1 << 62, 8192, 3);
        assert_eq!(ps.len(), 3);
        for w in ps.windows(2) {
            assert!(w[0] > w[1]);
        }
        for p in ps {
            assert!(is_prime(p) && p % 8192 == 1 && p < 1 << 62);
        }
    }

    #[test]
    fn inverse_and_shoup() {
        let p = 101_285_036_033u64;
        for a in [1u64, 2, 12345, p - 1] {
            let i = inv_mod(a, p).unwrap();
            assert_eq!(mul_mod(a, i, p), 1);
        }
        assert_eq!(inv_mod(6, 9), None);
        let q = primes_congruent_one(1 << 62, 8192, 1)[0];
        let s = ShoupMul::new(0x1234_5678_9abc, q);
        for x in [0u64, 1, q - 1, u64::MAX, 0xdead_beef_cafe] {
            assert_eq!(s.mul(x, q), mul_mod(x % q, 0x1234_5678_9abc, q));
        }
    }
}
