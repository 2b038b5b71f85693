//! Batched homomorphic encryption: the encrypt / decrypt / add /
//! plaintext-multiply interface that triplet generation consumes.
//!
//! Two backends implement [`HeScheme`]: [`Bfv`], a ring-LWE scheme with
//! NTT slot batching, and [`DealerMock`], which carries slots in the clear
//! for fast protocol tests. Plaintext slots live modulo one of several
//! batching primes; the same slot circuit is evaluated under each prime and
//! the results are recombined with [`CrtBasis`].

mod arith;
mod bfv;
mod crt;
mod mock;
mod ntt;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use arith::{is_prime, primes_congruent_one};
pub use bfv::Bfv;
pub use crt::CrtBasis;
pub use mock::DealerMock;
pub use ntt::NttTables;

use crate::error::{Error, Result};
use crate::rng::Prg;
use crate::transport::Reader;

/// First batching prime; 101,285,036,033 = 1 + 12,363,896 * 8192.
pub const DEFAULT_FIRST_PRIME: u64 = 101_285_036_033;

/// Statistical hiding margin for the TRIP mask, in bits.
pub const STAT_SECURITY_BITS: u32 = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeParams {
    pub poly_degree: usize,
    pub plain_modulus_primes: Vec<u64>,
    pub cipher_modulus_bits: u32,
    pub noise_sigma: f64,
}

impl Default for HeParams {
    fn default() -> Self {
        HeParams::with_degree(4096).expect("default parameters are valid")
    }
}

impl HeParams {
    /// Default layout at another ring degree: enough ~36.5-bit batching
    /// primes for full 64-bit triplets, a 124-bit ciphertext modulus.
    pub fn with_degree(n: usize) -> Result<Self> {
        let step = 2 * n as u64;
        let mut primes = Vec::new();
        if DEFAULT_FIRST_PRIME % step == 1 {
            primes.push(DEFAULT_FIRST_PRIME);
        }
        primes.extend(primes_congruent_one(DEFAULT_FIRST_PRIME, step, 5 - primes.len()));
        let p = HeParams {
            poly_degree: n,
            plain_modulus_primes: primes,
            cipher_modulus_bits: 124,
            noise_sigma: 3.2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.poly_degree;
        if !n.is_power_of_two() || !(2..=1 << 15).contains(&n) {
            return Err(Error::Params(format!("poly_degree {n} must be a power of two")));
        }
        if self.plain_modulus_primes.is_empty() {
            return Err(Error::Params("no plaintext primes".into()));
        }
        let step = 2 * n as u64;
        for (i, &p) in self.plain_modulus_primes.iter().enumerate() {
            if !is_prime(p) {
                return Err(Error::Params(format!("plaintext modulus {p} is not prime")));
            }
            if p % step != 1 {
                return Err(Error::Params(format!(
                    "plaintext prime {p} is not 1 mod {step}; slots cannot be batched"
                )));
            }
            if p >= 1 << 40 {
                return Err(Error::Params(format!("plaintext prime {p} exceeds 40 bits")));
            }
            if self.plain_modulus_primes[..i].contains(&p) {
                return Err(Error::Params(format!("plaintext prime {p} repeated")));
            }
        }
        if !(80..=124).contains(&self.cipher_modulus_bits) {
            return Err(Error::Params(format!(
                "cipher_modulus_bits {} outside 80..=124",
                self.cipher_modulus_bits
            )));
        }
        if !(self.noise_sigma > 0.5 && self.noise_sigma < 64.0) {
            return Err(Error::Params(format!("noise_sigma {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Stable 64-bit digest of the parameter set.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"oinf-he-params-v1");
        h.update((self.poly_degree as u64).to_le_bytes());
        for p in &self.plain_modulus_primes {
            h.update(p.to_le_bytes());
        }
        h.update(self.cipher_modulus_bits.to_le_bytes());
        h.update(self.noise_sigma.to_bits().to_le_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    /// Smallest prefix of the batching primes whose product exceeds
    /// 2^(2t + sigma + 1): large enough to hold `a1*b2 + a2*b1 + r` exactly.
    pub fn crt_primes_for(&self, t: u32) -> Result<&[u64]> {
        let need = (2 * t + STAT_SECURITY_BITS + 1) as f64;
        let mut bits = 0f64;
        for (i, &p) in self.plain_modulus_primes.iter().enumerate() {
            bits += (p as f64).log2();
            if bits > need {
                return Ok(&self.plain_modulus_primes[..=i]);
            }
        }
        Err(Error::Params(format!(
            "plaintext primes give {bits:.1} bits; triplets over 2^{t} need more than {need}"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Rlwe,
    DealerMock,
}

impl Backend {
    fn id(self) -> u8 {
        match self {
            Backend::Rlwe => 1,
            Backend::DealerMock => 2,
        }
    }

    fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Backend::Rlwe),
            2 => Ok(Backend::DealerMock),
            _ => Err(Error::format("ciphertext", format!("unknown backend {id}"))),
        }
    }
}

pub fn scheme(backend: Backend, params: HeParams) -> Result<Arc<dyn HeScheme>> {
    Ok(match backend {
        Backend::Rlwe => Arc::new(Bfv::new(params)?),
        Backend::DealerMock => Arc::new(DealerMock::new(params)?),
    })
}

pub trait HeScheme: Send + Sync {
    fn backend(&self) -> Backend;
    fn params(&self) -> &HeParams;
    fn params_hash(&self) -> u64;
    fn keygen(&self, rng: &mut Prg) -> (PublicKey, SecretKey);
    /// Encrypts up to `poly_degree` slots, each reduced below the
    /// `prime`-th batching prime.
    fn encrypt(&self, pk: &PublicKey, prime: usize, slots: &[u64], rng: &mut Prg)
        -> Result<Ciphertext>;
    fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<u64>>;
    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext>;
    fn plain_mul(&self, a: &Ciphertext, w: &[u64]) -> Result<Ciphertext>;

    fn slot_count(&self) -> usize {
        self.params().poly_degree
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum KeyBody {
    Rlwe { p0: Vec<Vec<u64>>, p1: Vec<Vec<u64>> },
    Clear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) params_hash: u64,
    pub(crate) body: KeyBody,
}

pub struct SecretKey {
    pub(crate) params_hash: u64,
    pub(crate) body: SecretBody,
}

pub(crate) enum SecretBody {
    Rlwe { s_ntt: Vec<Vec<u64>> },
    Clear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum CtBody {
    Rlwe { c0: Vec<Vec<u64>>, c1: Vec<Vec<u64>> },
    Clear { slots: Vec<u64> },
}

#[derive(Clone, Debug)]
pub struct Ciphertext {
    pub(crate) params_hash: u64,
    pub(crate) prime: u8,
    pub(crate) degree: u32,
    /// Heuristic log2 bound on the absolute noise.
    pub(crate) noise_log2: f64,
    pub(crate) body: CtBody,
}

impl PartialEq for Ciphertext {
    fn eq(&self, other: &Self) -> bool {
        self.params_hash == other.params_hash
            && self.prime == other.prime
            && self.degree == other.degree
            && self.body == other.body
    }
}

fn push_words(out: &mut Vec<u8>, words: &[u64]) {
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

fn read_words(r: &mut Reader<'_>, n: usize) -> Result<Vec<u64>> {
    let bytes = r.take(n * 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Ciphertext {
    pub fn prime_index(&self) -> usize {
        self.prime as usize
    }

    pub fn backend(&self) -> Backend {
        match self.body {
            CtBody::Rlwe { .. } => Backend::Rlwe,
            CtBody::Clear { .. } => Backend::DealerMock,
        }
    }

    /// Header `{params hash u64, backend u8, prime index u8, degree u32}`
    /// followed by the coefficient arrays, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_into(&mut out);
        out
    }

    pub fn write_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.params_hash.to_le_bytes());
        out.push(self.backend().id());
        out.push(self.prime);
        out.extend_from_slice(&self.degree.to_le_bytes());
        match &self.body {
            CtBody::Rlwe { c0, c1 } => {
                out.push(c0.len() as u8);
                for c in c0.iter().chain(c1) {
                    push_words(out, c);
                }
            }
            CtBody::Clear { slots } => push_words(out, slots),
        }
    }

    pub fn from_bytes(bytes: &[u8], scheme: &dyn HeScheme) -> Result<Self> {
        let mut r = Reader::new(bytes, "ciphertext");
        let ct = Ciphertext::read_from(&mut r, scheme)?;
        r.finish()?;
        Ok(ct)
    }

    pub(crate) fn read_from(r: &mut Reader<'_>, scheme: &dyn HeScheme) -> Result<Self> {
        let params_hash = r.u64()?;
        if params_hash != scheme.params_hash() {
            return Err(Error::format("ciphertext", "parameter hash mismatch"));
        }
        let backend = Backend::from_id(r.u8()?)?;
        if backend != scheme.backend() {
            return Err(Error::format("ciphertext", "backend mismatch"));
        }
        let prime = r.u8()?;
        if prime as usize >= scheme.params().plain_modulus_primes.len() {
            return Err(Error::format("ciphertext", format!("prime index {prime}")));
        }
        let degree = r.u32()?;
        let n = scheme.params().poly_degree;
        if degree as usize != n {
            return Err(Error::format("ciphertext", format!("degree {degree} != {n}")));
        }
        let body = match backend {
            Backend::Rlwe => {
                let k = r.u8()? as usize;
                if k != 2 {
                    return Err(Error::format("ciphertext", format!("{k} RNS limbs")));
                }
                let mut polys = (0..2 * k)
                    .map(|_| read_words(r, n))
                    .collect::<Result<Vec<_>>>()?;
                let c1 = polys.split_off(k);
                CtBody::Rlwe { c0: polys, c1 }
            }
            Backend::DealerMock => CtBody::Clear {
                slots: read_words(r, n)?,
            },
        };
        Ok(Ciphertext {
            params_hash,
            prime,
            degree,
            noise_log2: scheme.fresh_noise_log2(),
            body,
        })
    }
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.params_hash.to_le_bytes().to_vec();
        match &self.body {
            KeyBody::Rlwe { p0, p1 } => {
                out.push(Backend::Rlwe.id());
                out.push(p0.len() as u8);
                out.extend_from_slice(&(p0[0].len() as u32).to_le_bytes());
                for c in p0.iter().chain(p1) {
                    push_words(&mut out, c);
                }
            }
            KeyBody::Clear => out.push(Backend::DealerMock.id()),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], scheme: &dyn HeScheme) -> Result<Self> {
        let mut r = Reader::new(bytes, "public key");
        let params_hash = r.u64()?;
        if params_hash != scheme.params_hash() {
            return Err(Error::format("public key", "parameter hash mismatch"));
        }
        let body = match Backend::from_id(r.u8()?)? {
            Backend::Rlwe => {
                let k = r.u8()? as usize;
                let n = r.u32()? as usize;
                if k != 2 || n != scheme.params().poly_degree {
                    return Err(Error::format("public key", "shape mismatch"));
                }
                let mut polys = (0..2 * k)
                    .map(|_| read_words(&mut r, n))
                    .collect::<Result<Vec<_>>>()?;
                let p1 = polys.split_off(k);
                KeyBody::Rlwe { p0: polys, p1 }
            }
            Backend::DealerMock => KeyBody::Clear,
        };
        r.finish()?;
        Ok(PublicKey { params_hash, body })
    }
}

/// Internal hook for deserialization: receivers treat incoming ciphertexts
/// as fresh encryptions for noise bookkeeping.
pub(crate) trait FreshNoise {
    fn fresh_noise_log2(&self) -> f64;
}

impl<T: HeScheme + ?Sized> FreshNoise for T {
    fn fresh_noise_log2(&self) -> f64 {
        let p = self.params();
        fresh_noise_bound_log2(p.poly_degree, p.noise_sigma)
    }
}

/// log2 of a worst-case bound on `e*u + e1 + e2*s` for ternary `u`, `s`
/// and errors bounded by six standard deviations.
pub(crate) fn fresh_noise_bound_log2(n: usize, sigma: f64) -> f64 {
    (6.0 * sigma * (2 * n + 1) as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameters() {
        let p = HeParams::default();
        assert_eq!(p.poly_degree, 4096);
        assert_eq!(p.plain_modulus_primes[0], 101_285_036_033);
        assert_eq!(p.crt_primes_for(64).unwrap().len(), 5);
        assert_eq!(p.crt_primes_for(16).unwrap().len(), 2);
        p.validate().unwrap();
    }

    #[test]
    fn default_prime_accepted_small_prime_rejected() {
        let mut p = HeParams::default();
        p.plain_modulus_primes = vec![101_285_036_033];
        assert!(p.validate().is_ok());
        p.plain_modulus_primes = vec![7];
        assert!(matches!(p.validate(), Err(Error::Params(_))));
        p.plain_modulus_primes = vec![101_285_036_033, 101_285_036_033];
        assert!(p.validate().is_err());
        // prime, but not 1 mod 8192
        p.plain_modulus_primes = vec![1_000_000_007];
        assert!(p.validate().is_err());
    }

    #[test]
    fn hash_is_sensitive_to_every_field() {
        let base = HeParams::default();
        let mut a = base.clone();
        a.noise_sigma = 3.3;
        let mut b = base.clone();
        b.plain_modulus_primes.pop();
        let mut c = base.clone();
        c.cipher_modulus_bits = 120;
        for other in [a, b, c] {
            assert_ne!(base.hash(), other.hash());
        }
        assert_eq!(base.hash(), HeParams::default().hash());
    }
}
