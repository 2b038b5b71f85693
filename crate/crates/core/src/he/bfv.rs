//! Scale-invariant ring-LWE encryption over R_q = Z_q[X]/(X^n + 1) with
//! plaintexts in R_p batched through the negacyclic NTT modulo p.
//!
//! q is a product of two ~62-bit NTT primes held in RNS form; ciphertexts
//! stay in the evaluation domain so plaintext multiplication and addition
//! are pointwise.

use rand::Rng;

use super::arith::{add_mod, inv_mod, mul_mod, primes_congruent_one, sub_mod};
use super::ntt::NttTables;
use super::{
    fresh_noise_bound_log2, Backend, Ciphertext, CtBody, HeParams, HeScheme, KeyBody, PublicKey,
    SecretBody, SecretKey,
};
use crate::error::{Error, Result};
use crate::rng::Prg;

struct PlainCtx {
    p: u64,
    ntt: NttTables,
    delta_mod_q: [u64; 2],
    /// log2(delta / 2): noise must stay below this.
    budget_log2: f64,
}

pub struct Bfv {
    params: HeParams,
    hash: u64,
    n: usize,
    q_primes: [u64; 2],
    q: u128,
    q_ntt: [NttTables; 2],
    q0_inv_mod_q1: u64,
    plain: Vec<PlainCtx>,
    cbd_k: u32,
}

impl Bfv {
    pub fn new(params: HeParams) -> Result<Self> {
        params.validate()?;
        let n = params.poly_degree;
        let half_bits = params.cipher_modulus_bits / 2;
        let qs = primes_congruent_one(1u64 << half_bits, 2 * n as u64, 2);
        if qs.len() < 2 {
            return Err(Error::Params("no ciphertext primes found".into()));
        }
        let q_primes = [qs[0], qs[1]];
        let q = q_primes[0] as u128 * q_primes[1] as u128;
        let q_ntt = [
            NttTables::new(n, q_primes[0])?,
            NttTables::new(n, q_primes[1])?,
        ];
        let q0_inv_mod_q1 = inv_mod(q_primes[0] % q_primes[1], q_primes[1]).unwrap();
        let mut plain = Vec::new();
        for &p in &params.plain_modulus_primes {
            let delta = q / p as u128;
            plain.push(PlainCtx {
                p,
                ntt: NttTables::new(n, p)?,
                delta_mod_q: [
                    (delta % q_primes[0] as u128) as u64,
                    (delta % q_primes[1] as u128) as u64,
                ],
                budget_log2: (delta as f64).log2() - 1.0,
            });
        }
        let cbd_k = ((2.0 * params.noise_sigma * params.noise_sigma).round() as u32).clamp(1, 64);
        let bfv = Bfv {
            hash: params.hash(),
            n,
            q_primes,
            q,
            q_ntt,
            q0_inv_mod_q1,
            plain,
            cbd_k,
            params,
        };
        // One plaintext product followed by two additions must fit.
        for idx in 0..bfv.plain.len() {
            let depth = bfv.mul_noise(bfv.fresh(), idx) + 2.0;
            if depth >= bfv.plain[idx].budget_log2 {
                return Err(Error::Params(format!(
                    "{}-bit ciphertext modulus leaves no noise budget for prime {}",
                    bfv.params.cipher_modulus_bits, bfv.plain[idx].p
                )));
            }
        }
        Ok(bfv)
    }

    fn fresh(&self) -> f64 {
        fresh_noise_bound_log2(self.n, self.params.noise_sigma)
    }

    /// Noise after multiplying by a centered plaintext, including the
    /// rounding term from q not being a multiple of p.
    fn mul_noise(&self, noise_log2: f64, prime: usize) -> f64 {
        let p = self.plain[prime].p as f64;
        let n = self.n as f64;
        let scaled = noise_log2 + (n * p / 2.0).log2();
        let wrap = (p * n * p / 2.0).log2();
        let hi = scaled.max(wrap);
        hi + (1.0 + 2f64.powf(scaled.min(wrap) - hi)).log2()
    }

    fn check_budget(&self, noise_log2: f64, prime: usize) -> Result<()> {
        if noise_log2 >= self.plain[prime].budget_log2 {
            return Err(Error::Integrity(format!(
                "noise budget exhausted (2^{noise_log2:.1} vs 2^{:.1})",
                self.plain[prime].budget_log2
            )));
        }
        Ok(())
    }

    fn sample_ternary(&self, rng: &mut Prg) -> Vec<i64> {
        (0..self.n).map(|_| rng.gen_range(-1i64..=1)).collect()
    }

    fn sample_error(&self, rng: &mut Prg) -> Vec<i64> {
        let mask = if self.cbd_k == 64 {
            u64::MAX
        } else {
            (1u64 << self.cbd_k) - 1
        };
        (0..self.n)
            .map(|_| {
                let a = (rng.gen::<u64>() & mask).count_ones() as i64;
                let b = (rng.gen::<u64>() & mask).count_ones() as i64;
                a - b
            })
            .collect()
    }

    fn to_ntt(&self, small: &[i64], limb: usize) -> Vec<u64> {
        let q = self.q_primes[limb];
        let mut v: Vec<u64> = small
            .iter()
            .map(|&x| if x >= 0 { x as u64 % q } else { q - ((-x) as u64 % q) })
            .collect();
        self.q_ntt[limb].forward(&mut v);
        v
    }

    fn check_ct(&self, ct: &Ciphertext) -> Result<()> {
        if ct.params_hash != self.hash {
            return Err(Error::Params("ciphertext from another parameter set".into()));
        }
        if ct.prime as usize >= self.plain.len() {
            return Err(Error::Params(format!("prime index {}", ct.prime)));
        }
        Ok(())
    }

    fn check_slots(&self, slots: &[u64], prime: usize) -> Result<()> {
        if slots.len() > self.n {
            return Err(Error::Range(format!(
                "{} slots exceed degree {}",
                slots.len(),
                self.n
            )));
        }
        let p = self.plain[prime].p;
        if let Some(bad) = slots.iter().find(|&&s| s >= p) {
            return Err(Error::Range(format!("slot value {bad} >= plaintext modulus {p}")));
        }
        Ok(())
    }

    /// Slot vector to plaintext polynomial coefficients in [0, p).
    fn encode(&self, slots: &[u64], prime: usize) -> Vec<u64> {
        let mut m = vec![0u64; self.n];
        m[..slots.len()].copy_from_slice(slots);
        self.plain[prime].ntt.inverse(&mut m);
        m
    }

    /// round(p * x / q) for 0 <= x < q, with the distance |p*x - q*m|.
    fn scale_round(&self, x: u128, p: u64) -> (u128, u128) {
        let q = self.q;
        let est = ((x as f64) * (p as f64) / (q as f64)).floor();
        let mut quo = est as i128;
        let mut r = (p as u128)
            .wrapping_mul(x)
            .wrapping_sub((quo as u128).wrapping_mul(q)) as i128;
        while r < 0 {
            r += q as i128;
            quo -= 1;
        }
        while r >= q as i128 {
            r -= q as i128;
            quo += 1;
        }
        let r = r as u128;
        if 2 * r >= q {
            ((quo + 1) as u128, q - r)
        } else {
            (quo as u128, r)
        }
    }

    /// Decryption noise as a fraction of the rounding threshold: values at
    /// or above 1/2 decrypt incorrectly.
    pub fn noise_fraction(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<f64> {
        Ok(self.decrypt_raw(sk, ct)?.1)
    }

    fn decrypt_raw(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<(Vec<u64>, f64)> {
        self.check_ct(ct)?;
        let (SecretBody::Rlwe { s_ntt }, CtBody::Rlwe { c0, c1 }) = (&sk.body, &ct.body) else {
            return Err(Error::Params("key/ciphertext backend mismatch".into()));
        };
        if sk.params_hash != self.hash {
            return Err(Error::Params("secret key from another parameter set".into()));
        }
        let mut limbs: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
        for (l, limb) in limbs.iter_mut().enumerate() {
            let q = self.q_primes[l];
            let mut x: Vec<u64> = (0..self.n)
                .map(|j| add_mod(c0[l][j], mul_mod(c1[l][j], s_ntt[l][j], q), q))
                .collect();
            self.q_ntt[l].inverse(&mut x);
            *limb = x;
        }
        let pc = &self.plain[ct.prime as usize];
        let (q0, q1) = (self.q_primes[0], self.q_primes[1]);
        let mut worst = 0u128;
        let mut m: Vec<u64> = (0..self.n)
            .map(|j| {
                let (a, b) = (limbs[0][j], limbs[1][j]);
                let h = mul_mod(sub_mod(b, a % q1, q1), self.q0_inv_mod_q1, q1);
                let x = a as u128 + q0 as u128 * h as u128;
                let (v, dev) = self.scale_round(x, pc.p);
                worst = worst.max(dev);
                (v % pc.p as u128) as u64
            })
            .collect();
        pc.ntt.forward(&mut m);
        Ok((m, worst as f64 / self.q as f64))
    }
}

impl HeScheme for Bfv {
    fn backend(&self) -> Backend {
        Backend::Rlwe
    }

    fn params(&self) -> &HeParams {
        &self.params
    }

    fn params_hash(&self) -> u64 {
        self.hash
    }

    fn keygen(&self, rng: &mut Prg) -> (PublicKey, SecretKey) {
        let s = self.sample_ternary(rng);
        let e = self.sample_error(rng);
        let mut p0 = Vec::with_capacity(2);
        let mut p1 = Vec::with_capacity(2);
        let mut s_ntt = Vec::with_capacity(2);
        for l in 0..2 {
            let q = self.q_primes[l];
            let sl = self.to_ntt(&s, l);
            let el = self.to_ntt(&e, l);
            let a: Vec<u64> = (0..self.n).map(|_| rng.gen_range(0..q)).collect();
            let b: Vec<u64> = (0..self.n)
                .map(|j| sub_mod(0, add_mod(mul_mod(a[j], sl[j], q), el[j], q), q))
                .collect();
            p0.push(b);
            p1.push(a);
            s_ntt.push(sl);
        }
        (
            PublicKey {
                params_hash: self.hash,
                body: KeyBody::Rlwe { p0, p1 },
            },
            SecretKey {
                params_hash: self.hash,
                body: SecretBody::Rlwe { s_ntt },
            },
        )
    }

    fn encrypt(
        &self,
        pk: &PublicKey,
        prime: usize,
        slots: &[u64],
        rng: &mut Prg,
    ) -> Result<Ciphertext> {
        if prime >= self.plain.len() {
            return Err(Error::Params(format!("prime index {prime}")));
        }
        self.check_slots(slots, prime)?;
        let KeyBody::Rlwe { p0, p1 } = &pk.body else {
            return Err(Error::Params("public key is not a ring-LWE key".into()));
        };
        if pk.params_hash != self.hash {
            return Err(Error::Params("public key from another parameter set".into()));
        }
        let m = self.encode(slots, prime);
        let u = self.sample_ternary(rng);
        let e1 = self.sample_error(rng);
        let e2 = self.sample_error(rng);
        let pc = &self.plain[prime];
        let mut c0 = Vec::with_capacity(2);
        let mut c1 = Vec::with_capacity(2);
        for l in 0..2 {
            let q = self.q_primes[l];
            let ul = self.to_ntt(&u, l);
            let mut t0: Vec<u64> = (0..self.n)
                .map(|j| {
                    let e = e1[j];
                    let e = if e >= 0 { e as u64 } else { q - (-e) as u64 };
                    add_mod(e, mul_mod(pc.delta_mod_q[l], m[j], q), q)
                })
                .collect();
            self.q_ntt[l].forward(&mut t0);
            let e2l = self.to_ntt(&e2, l);
            c0.push(
                (0..self.n)
                    .map(|j| add_mod(mul_mod(p0[l][j], ul[j], q), t0[j], q))
                    .collect(),
            );
            c1.push(
                (0..self.n)
                    .map(|j| add_mod(mul_mod(p1[l][j], ul[j], q), e2l[j], q))
                    .collect(),
            );
        }
        Ok(Ciphertext {
            params_hash: self.hash,
            prime: prime as u8,
            degree: self.n as u32,
            noise_log2: self.fresh(),
            body: CtBody::Rlwe { c0, c1 },
        })
    }

    fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<u64>> {
        let (slots, frac) = self.decrypt_raw(sk, ct)?;
        if frac > 0.25 {
            return Err(Error::Integrity(format!(
                "decryption noise at {frac:.3} of the modulus; result unreliable"
            )));
        }
        Ok(slots)
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check_ct(a)?;
        self.check_ct(b)?;
        if a.prime != b.prime {
            return Err(Error::Params("adding ciphertexts under different primes".into()));
        }
        let (CtBody::Rlwe { c0: a0, c1: a1 }, CtBody::Rlwe { c0: b0, c1: b1 }) =
            (&a.body, &b.body)
        else {
            return Err(Error::Params("backend mismatch".into()));
        };
        let noise = a.noise_log2.max(b.noise_log2) + 1.0;
        self.check_budget(noise, a.prime as usize)?;
        let sum = |x: &Vec<Vec<u64>>, y: &Vec<Vec<u64>>| -> Vec<Vec<u64>> {
            (0..2)
                .map(|l| {
                    let q = self.q_primes[l];
                    x[l].iter().zip(&y[l]).map(|(u, v)| add_mod(*u, *v, q)).collect()
                })
                .collect()
        };
        Ok(Ciphertext {
            params_hash: self.hash,
            prime: a.prime,
            degree: a.degree,
            noise_log2: noise,
            body: CtBody::Rlwe {
                c0: sum(a0, b0),
                c1: sum(a1, b1),
            },
        })
    }

    fn plain_mul(&self, a: &Ciphertext, w: &[u64]) -> Result<Ciphertext> {
        self.check_ct(a)?;
        let prime = a.prime as usize;
        self.check_slots(w, prime)?;
        let noise = self.mul_noise(a.noise_log2, prime);
        self.check_budget(noise, prime)?;
        let CtBody::Rlwe { c0, c1 } = &a.body else {
            return Err(Error::Params("backend mismatch".into()));
        };
        let p = self.plain[prime].p;
        let wp = self.encode(w, prime);
        let centered: Vec<i64> = wp
            .iter()
            .map(|&x| if x > p / 2 { x as i64 - p as i64 } else { x as i64 })
            .collect();
        let mut o0 = Vec::with_capacity(2);
        let mut o1 = Vec::with_capacity(2);
        for l in 0..2 {
            let q = self.q_primes[l];
            let wl = self.to_ntt(&centered, l);
            o0.push((0..self.n).map(|j| mul_mod(c0[l][j], wl[j], q)).collect());
            o1.push((0..self.n).map(|j| mul_mod(c1[l][j], wl[j], q)).collect());
        }
        Ok(Ciphertext {
            params_hash: self.hash,
            prime: a.prime,
            degree: a.degree,
            noise_log2: noise,
            body: CtBody::Rlwe { c0: o0, c1: o1 },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    fn small() -> Bfv {
        Bfv::new(HeParams::with_degree(256).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_and_homomorphisms_small_degree() {
        let he = small();
        let mut rng = Seed::from_u64(1).rng();
        let (pk, sk) = he.keygen(&mut rng);
        for prime in 0..he.plain.len() {
            let p = he.plain[prime].p;
            let u: Vec<u64> = (0..256).map(|_| rng.gen_range(0..p)).collect();
            let w: Vec<u64> = (0..256).map(|_| rng.gen_range(0..p)).collect();
            let cu = he.encrypt(&pk, prime, &u, &mut rng).unwrap();
            assert_eq!(he.decrypt(&sk, &cu).unwrap(), u);
            let cw = he.encrypt(&pk, prime, &w, &mut rng).unwrap();
            let sum: Vec<u64> = u.iter().zip(&w).map(|(a, b)| (a + b) % p).collect();
            assert_eq!(he.decrypt(&sk, &he.add(&cu, &cw).unwrap()).unwrap(), sum);
            let prod: Vec<u64> = u.iter().zip(&w).map(|(a, b)| mul_mod(*a, *b, p)).collect();
            let cp = he.plain_mul(&cu, &w).unwrap();
            assert_eq!(he.decrypt(&sk, &cp).unwrap(), prod);
        }
    }

    #[test]
    fn fresh_noise_is_small() {
        let he = small();
        let mut rng = Seed::from_u64(2).rng();
        let (pk, sk) = he.keygen(&mut rng);
        let ct = he.encrypt(&pk, 0, &[1, 2, 3], &mut rng).unwrap();
        let frac = he.noise_fraction(&sk, &ct).unwrap();
        assert!(frac < 1e-15, "{frac}");
    }

    #[test]
    fn repeated_products_exhaust_budget_loudly() {
        let he = small();
        let mut rng = Seed::from_u64(3).rng();
        let (pk, _) = he.keygen(&mut rng);
        let p = he.plain[0].p;
        let w: Vec<u64> = (0..256).map(|_| rng.gen_range(0..p)).collect();
        let mut ct = he.encrypt(&pk, 0, &[5], &mut rng).unwrap();
        ct = he.plain_mul(&ct, &w).unwrap();
        assert!(matches!(he.plain_mul(&ct, &w), Err(Error::Integrity(_))));
    }

    #[test]
    fn slot_overflow_rejected() {
        let he = small();
        let mut rng = Seed::from_u64(4).rng();
        let (pk, _) = he.keygen(&mut rng);
        let p = he.plain[0].p;
        assert!(matches!(he.encrypt(&pk, 0, &[p], &mut rng), Err(Error::Range(_))));
        assert!(he.encrypt(&pk, 0, &vec![0; 257], &mut rng).is_err());
    }
}
