//! Seedable randomness. Every protocol draws from a ChaCha20 stream derived
//! from a root seed plus a label path, so transcripts replay bit-for-bit in
//! tests while production roots come from OS entropy.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Prg = ChaCha20Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Seed(pub [u8; 32]);

impl Seed {
    pub fn from_u64(v: u64) -> Self {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&v.to_le_bytes());
        Seed(s)
    }

    pub fn from_entropy() -> Self {
        let mut s = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut s);
        Seed(s)
    }

    pub fn derive(&self, label: &str, index: u64) -> Seed {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update(index.to_le_bytes());
        Seed(h.finalize().into())
    }

    pub fn rng(&self) -> Prg {
        Prg::from_seed(self.0)
    }

    pub fn rng_for(&self, label: &str, index: u64) -> Prg {
        self.derive(label, index).rng()
    }
}
