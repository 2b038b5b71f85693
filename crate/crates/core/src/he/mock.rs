//! Insecure stand-in with the same interface: "ciphertexts" are the slot
//! vectors themselves. Protocol tests run against both backends.

use super::arith::{add_mod, mul_mod};
use super::{
    Backend, Ciphertext, CtBody, HeParams, HeScheme, KeyBody, PublicKey, SecretBody, SecretKey,
};
use crate::error::{Error, Result};
use crate::rng::Prg;

pub struct DealerMock {
    params: HeParams,
    hash: u64,
}

impl DealerMock {
    pub fn new(params: HeParams) -> Result<Self> {
        params.validate()?;
        Ok(DealerMock {
            hash: params.hash(),
            params,
        })
    }

    fn slots_of<'a>(&self, ct: &'a Ciphertext) -> Result<&'a [u64]> {
        if ct.params_hash != self.hash {
            return Err(Error::Params("ciphertext from another parameter set".into()));
        }
        match &ct.body {
            CtBody::Clear { slots } => Ok(slots),
            CtBody::Rlwe { .. } => Err(Error::Params("backend mismatch".into())),
        }
    }

    fn check(&self, prime: usize, slots: &[u64]) -> Result<u64> {
        let p = *self
            .params
            .plain_modulus_primes
            .get(prime)
            .ok_or_else(|| Error::Params(format!("prime index {prime}")))?;
        if slots.len() > self.params.poly_degree {
            return Err(Error::Range(format!("{} slots", slots.len())));
        }
        if let Some(bad) = slots.iter().find(|&&s| s >= p) {
            return Err(Error::Range(format!("slot value {bad} >= plaintext modulus {p}")));
        }
        Ok(p)
    }

    fn wrap(&self, prime: u8, slots: Vec<u64>) -> Ciphertext {
        Ciphertext {
            params_hash: self.hash,
            prime,
            degree: self.params.poly_degree as u32,
            noise_log2: 0.0,
            body: CtBody::Clear { slots },
        }
    }
}

impl HeScheme for DealerMock {
    fn backend(&self) -> Backend {
        Backend::DealerMock
    }

    fn params(&self) -> &HeParams {
        &self.params
    }

    fn params_hash(&self) -> u64 {
        self.hash
    }

    fn keygen(&self, _rng: &mut Prg) -> (PublicKey, SecretKey) {
        (
            PublicKey {
                params_hash: self.hash,
                body: KeyBody::Clear,
            },
            SecretKey {
                params_hash: self.hash,
                body: SecretBody::Clear,
            },
        )
    }

    fn encrypt(
        &self,
        _pk: &PublicKey,
        prime: usize,
        slots: &[u64],
        _rng: &mut Prg,
    ) -> Result<Ciphertext> {
        self.check(prime, slots)?;
        let mut v = vec![0u64; self.params.poly_degree];
        v[..slots.len()].copy_from_slice(slots);
        Ok(self.wrap(prime as u8, v))
    }

    fn decrypt(&self, _sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<u64>> {
        Ok(self.slots_of(ct)?.to_vec())
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        if a.prime != b.prime {
            return Err(Error::Params("adding ciphertexts under different primes".into()));
        }
        let p = self.params.plain_modulus_primes[a.prime as usize];
        let (x, y) = (self.slots_of(a)?, self.slots_of(b)?);
        Ok(self.wrap(
            a.prime,
            x.iter().zip(y).map(|(u, v)| add_mod(*u, *v, p)).collect(),
        ))
    }

    fn plain_mul(&self, a: &Ciphertext, w: &[u64]) -> Result<Ciphertext> {
        let p = self.check(a.prime as usize, w)?;
        let x = self.slots_of(a)?;
        Ok(self.wrap(
            a.prime,
            x.iter()
                .enumerate()
                .map(|(i, u)| mul_mod(*u, w.get(i).copied().unwrap_or(0), p))
                .collect(),
        ))
    }
}
