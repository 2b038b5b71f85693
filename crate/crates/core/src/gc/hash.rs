//! 128-bit blocks, the fixed-key AES tweakable hash and an AES-CTR PRG.

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::{Aes128, Block as AesBlock};

pub type Block = u128;

#[inline]
pub fn lsb(b: Block) -> bool {
    b & 1 == 1
}

/// `H(x, i) = pi(pi(x) ^ i) ^ pi(x)` with `pi` AES under a public key
/// fixed per session: tweakable and circular-correlation robust.
#[derive(Clone)]
pub struct Tccr {
    aes: Aes128,
}

impl Tccr {
    pub fn new(key: [u8; 16]) -> Self {
        Tccr {
            aes: Aes128::new(&key.into()),
        }
    }

    #[inline]
    fn perm(&self, x: Block) -> Block {
        let mut b = AesBlock::from(x.to_le_bytes());
        self.aes.encrypt_block(&mut b);
        u128::from_le_bytes(b.into())
    }

    #[inline]
    pub fn hash(&self, x: Block, tweak: u128) -> Block {
        let px = self.perm(x);
        self.perm(px ^ tweak) ^ px
    }
}

/// Expands a 128-bit seed into a stream of blocks; `fill(offset, out)`
/// writes blocks `offset..offset + out.len()`.
pub struct CtrPrg {
    aes: Aes128,
}

impl CtrPrg {
    pub fn new(seed: Block) -> Self {
        CtrPrg {
            aes: Aes128::new(&seed.to_le_bytes().into()),
        }
    }

    pub fn fill(&self, offset: u64, out: &mut [Block]) {
        let mut buf: Vec<AesBlock> = (0..out.len() as u64)
            .map(|i| AesBlock::from(((offset + i) as u128).to_le_bytes()))
            .collect();
        self.aes.encrypt_blocks(&mut buf);
        for (o, b) in out.iter_mut().zip(buf) {
            *o = u128::from_le_bytes(b.into());
        }
    }
}
