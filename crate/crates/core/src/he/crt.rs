//! Recombination of residues modulo several plaintext primes into the
//! low `t` bits of the underlying integer, without big-integer arithmetic.
//!
//! With `y_i = x_i * (M/p_i)^{-1} mod p_i`, the integer is
//! `v = sum(y_i * M/p_i) - k*M` where `k = round(sum(y_i / p_i))` as long as
//! `v` is small relative to `M`. The fractional remainder `v / M` doubles as
//! an integrity check against the statistical bound on `v`.

use super::arith::{inv_mod, mul_mod};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CrtBasis {
    primes: Vec<u64>,
    inv_cofactor: Vec<u64>,
    cofactor_low: Vec<u64>,
    modulus_low: u64,
    log2_modulus: f64,
}

impl CrtBasis {
    pub fn new(primes: &[u64]) -> Result<Self> {
        if primes.is_empty() {
            return Err(Error::Params("empty CRT basis".into()));
        }
        let mut inv_cofactor = Vec::with_capacity(primes.len());
        let mut cofactor_low = Vec::with_capacity(primes.len());
        for (i, &p) in primes.iter().enumerate() {
            let mut cof_mod_p = 1u64;
            let mut cof_low = 1u64;
            for (j, &q) in primes.iter().enumerate() {
                if i != j {
                    cof_mod_p = mul_mod(cof_mod_p, q % p, p);
                    cof_low = cof_low.wrapping_mul(q);
                }
            }
            inv_cofactor.push(
                inv_mod(cof_mod_p, p)
                    .ok_or_else(|| Error::Params(format!("CRT primes not coprime at {p}")))?,
            );
            cofactor_low.push(cof_low);
        }
        Ok(CrtBasis {
            primes: primes.to_vec(),
            inv_cofactor,
            cofactor_low,
            modulus_low: primes.iter().fold(1u64, |a, &p| a.wrapping_mul(p)),
            log2_modulus: primes.iter().map(|&p| (p as f64).log2()).sum(),
        })
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn log2_modulus(&self) -> f64 {
        self.log2_modulus
    }

    /// Returns `v mod 2^64` for the unique `0 <= v < M` with the given
    /// residues, provided `v < 2^bound_bits`; otherwise an integrity error.
    pub fn recombine_low64(&self, residues: &[u64], bound_bits: u32) -> Result<u64> {
        debug_assert_eq!(residues.len(), self.primes.len());
        let mut frac = 0f64;
        let mut low = 0u64;
        for i in 0..self.primes.len() {
            let p = self.primes[i];
            let y = mul_mod(residues[i] % p, self.inv_cofactor[i], p);
            frac += y as f64 / p as f64;
            low = low.wrapping_add(y.wrapping_mul(self.cofactor_low[i]));
        }
        let k = frac.round();
        let rem = frac - k;
        let allowed = 2f64.powf(bound_bits as f64 - self.log2_modulus);
        let slack = 1e-9;
        if rem < -slack || rem > allowed + slack {
            return Err(Error::Integrity(format!(
                "recombined value exceeds 2^{bound_bits} (fraction {rem:e})"
            )));
        }
        Ok(low.wrapping_sub((k as u64).wrapping_mul(self.modulus_low)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::arith::primes_congruent_one;
    use crate::rng::Seed;
    use num_bigint::BigUint;
    use rand::Rng;

    fn basis(k: usize) -> CrtBasis {
        let mut ps = vec![101_285_036_033u64];
        ps.extend(primes_congruent_one(101_285_036_033, 8192, k - 1));
        CrtBasis::new(&ps).unwrap()
    }

    #[test]
    fn matches_bigint_oracle() {
        let b = basis(5);
        let mut rng = Seed::from_u64(11).rng();
        for _ in 0..2000 {
            let bits = rng.gen_range(1..=169u32);
            let mut v = BigUint::from(0u8);
            for _ in 0..3 {
                v = (v << 64) + BigUint::from(rng.gen::<u64>());
            }
            v %= BigUint::from(1u8) << bits;
            let residues: Vec<u64> = b
                .primes()
                .iter()
                .map(|&p| (&v % BigUint::from(p)).to_u64_digits().first().copied().unwrap_or(0))
                .collect();
            let low = (&v % (BigUint::from(1u8) << 64u32))
                .to_u64_digits()
                .first()
                .copied()
                .unwrap_or(0);
            assert_eq!(b.recombine_low64(&residues, 169).unwrap(), low);
        }
    }

    #[test]
    fn zero_and_tiny_values() {
        let b = basis(5);
        assert_eq!(b.recombine_low64(&[0; 5], 169).unwrap(), 0);
        assert_eq!(b.recombine_low64(&[1; 5], 169).unwrap(), 1);
    }

    #[test]
    fn out_of_bound_value_is_flagged() {
        let b = basis(5);
        let residues: Vec<u64> = b
            .primes()
            .iter()
            .map(|&p| crate::he::arith::pow_mod(2, 180, p))
            .collect();
        assert!(matches!(
            b.recombine_low64(&residues, 169),
            Err(Error::Integrity(_))
        ));
    }
}
