//! 1-out-of-2 oblivious transfer: 128 base OTs ("simplest OT" over the
//! Ristretto group) extended to any number of transfers with IKNP.
//!
//! Roles are swapped between the two layers: the extension receiver acts
//! as base-OT sender of its column seeds, the extension sender as base-OT
//! receiver with its secret choice string `s`.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::hash::{Block, CtrPrg, Tccr};
use crate::error::{Error, Result};
use crate::rng::Prg;
use crate::transport::{Channel, MsgType, Reader};

pub const KAPPA: usize = 128;

const ROUND_BASE_A: u8 = 0;
const ROUND_BASE_B: u8 = 1;
const ROUND_EXT_U: u8 = 2;
const ROUND_EXT_Y: u8 = 3;
const OT_HASH_KEY: [u8; 16] = *b"oinf-iknp-hash-k";

fn base_kdf(i: usize, a: &[u8; 32], b: &[u8; 32], p: &RistrettoPoint) -> Block {
    let mut h = Sha256::new();
    h.update(b"oinf-base-ot");
    h.update((i as u64).to_le_bytes());
    h.update(a);
    h.update(b);
    h.update(p.compress().as_bytes());
    u128::from_le_bytes(h.finalize()[..16].try_into().unwrap())
}

fn point(bytes: &[u8]) -> Result<(RistrettoPoint, [u8; 32])> {
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| Error::format("OT message", "point length"))?;
    let p = CompressedRistretto(arr)
        .decompress()
        .ok_or_else(|| Error::format("OT message", "invalid group element"))?;
    Ok((p, arr))
}

fn expect_round(payload: &[u8], kind: u8) -> Result<Reader<'_>> {
    let mut r = Reader::new(payload, "OT message");
    let k = r.u8()?;
    if k != kind {
        return Err(Error::Protocol(format!("OT round {k}, expected {kind}")));
    }
    Ok(r)
}

/// Base OT, sender side: returns both random messages of each transfer.
pub fn base_ot_send(chan: &mut Channel, rng: &mut Prg, count: usize) -> Result<Vec<(Block, Block)>> {
    let a = Scalar::random(rng);
    let big_a = RistrettoPoint::mul_base(&a);
    let a_bytes = big_a.compress().to_bytes();
    let mut msg = vec![ROUND_BASE_A];
    msg.extend_from_slice(&a_bytes);
    chan.send(MsgType::OtRound, msg)?;
    let payload = chan.recv_expect(MsgType::OtRound)?;
    let mut r = expect_round(&payload, ROUND_BASE_B)?;
    let body = r.take(32 * count)?;
    r.finish()?;
    let a_big_a = a * big_a;
    body.par_chunks(32)
        .enumerate()
        .map(|(i, c)| {
            let (b, b_bytes) = point(c)?;
            let k0 = base_kdf(i, &a_bytes, &b_bytes, &(a * b));
            let k1 = base_kdf(i, &a_bytes, &b_bytes, &(a * b - a_big_a));
            Ok((k0, k1))
        })
        .collect()
}

/// Base OT, receiver side: one random message per choice bit.
pub fn base_ot_receive(chan: &mut Channel, rng: &mut Prg, choices: &[bool]) -> Result<Vec<Block>> {
    let payload = chan.recv_expect(MsgType::OtRound)?;
    let mut r = expect_round(&payload, ROUND_BASE_A)?;
    let (big_a, a_bytes) = point(r.take(32)?)?;
    r.finish()?;
    let mut msg = vec![ROUND_BASE_B];
    let mut keys = Vec::with_capacity(choices.len());
    for (i, &c) in choices.iter().enumerate() {
        let b = Scalar::random(rng);
        let mut big_b = RistrettoPoint::mul_base(&b);
        if c {
            big_b += big_a;
        }
        let b_bytes = big_b.compress().to_bytes();
        msg.extend_from_slice(&b_bytes);
        keys.push(base_kdf(i, &a_bytes, &b_bytes, &(b * big_a)));
    }
    chan.send(MsgType::OtRound, msg)?;
    Ok(keys)
}

/// In-place transpose of a 128x128 bit matrix (row `i` = word `i`,
/// column `j` = bit `j`).
pub fn transpose128(a: &mut [u128; 128]) {
    let mut j = 64usize;
    let mut m: u128 = u64::MAX as u128;
    while j != 0 {
        for k in 0..128 {
            if k & j == 0 {
                let t = ((a[k] >> j) ^ a[k | j]) & m;
                a[k] ^= t << j;
                a[k | j] ^= t;
            }
        }
        j >>= 1;
        m ^= m << j;
    }
}

/// Column matrix (KAPPA columns of `blocks` words) to per-transfer rows.
fn columns_to_rows(cols: &[Vec<Block>], blocks: usize) -> Vec<Block> {
    let mut rows = vec![0 as Block; blocks * 128];
    rows.par_chunks_mut(128).enumerate().for_each(|(b, out)| {
        let mut m = [0u128; 128];
        for i in 0..KAPPA {
            m[i] = cols[i][b];
        }
        transpose128(&mut m);
        out.copy_from_slice(&m);
    });
    rows
}

fn words_le(bytes: &[u8]) -> Vec<Block> {
    bytes
        .chunks_exact(16)
        .map(|c| u128::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Extension receiver: holds both seeds of every column.
pub struct OtExtReceiver {
    seeds: Vec<(CtrPrg, CtrPrg)>,
    offset: u64,
    index: u64,
    hash: Tccr,
}

/// Extension sender: holds one seed per column, selected by `s`.
pub struct OtExtSender {
    s: u128,
    seeds: Vec<CtrPrg>,
    offset: u64,
    index: u64,
    hash: Tccr,
}

impl OtExtReceiver {
    pub fn setup(chan: &mut Channel, rng: &mut Prg) -> Result<Self> {
        let keys = base_ot_send(chan, rng, KAPPA)?;
        Ok(OtExtReceiver {
            seeds: keys
                .into_iter()
                .map(|(k0, k1)| (CtrPrg::new(k0), CtrPrg::new(k1)))
                .collect(),
            offset: 0,
            index: 0,
            hash: Tccr::new(OT_HASH_KEY),
        })
    }

    /// Sends the correction matrix for `choices`; the sender's reply is
    /// consumed by [`OtExtReceiver::finish`].
    pub fn request(&mut self, chan: &mut Channel, choices: &[bool]) -> Result<PendingOt> {
        let m = choices.len();
        let blocks = m.div_ceil(128);
        let mut r = vec![0 as Block; blocks];
        for (j, &c) in choices.iter().enumerate() {
            r[j / 128] |= (c as u128) << (j % 128);
        }
        let offset = self.offset;
        let (t_cols, u_cols): (Vec<Vec<Block>>, Vec<Vec<Block>>) = self
            .seeds
            .par_iter()
            .map(|(g0, g1)| {
                let mut t = vec![0; blocks];
                let mut u = vec![0; blocks];
                g0.fill(offset, &mut t);
                g1.fill(offset, &mut u);
                for b in 0..blocks {
                    u[b] ^= t[b] ^ r[b];
                }
                (t, u)
            })
            .unzip();
        let mut msg = Vec::with_capacity(1 + 8 + KAPPA * blocks * 16);
        msg.push(ROUND_EXT_U);
        msg.extend_from_slice(&(m as u64).to_le_bytes());
        for col in &u_cols {
            for w in col {
                msg.extend_from_slice(&w.to_le_bytes());
            }
        }
        chan.send(MsgType::OtRound, msg)?;
        let rows = columns_to_rows(&t_cols, blocks);
        let pending = PendingOt {
            choices: choices.to_vec(),
            rows,
            index: self.index,
        };
        self.offset += blocks as u64;
        self.index += m as u64;
        Ok(pending)
    }

    pub fn finish(&self, chan: &mut Channel, pending: PendingOt) -> Result<Vec<Block>> {
        let payload = chan.recv_expect(MsgType::OtRound)?;
        let mut r = expect_round(&payload, ROUND_EXT_Y)?;
        let m = pending.choices.len();
        if r.u64()? != m as u64 {
            return Err(Error::Protocol("OT reply count mismatch".into()));
        }
        let ys = words_le(r.take(32 * m)?);
        r.finish()?;
        Ok((0..m)
            .into_par_iter()
            .map(|j| {
                let y = ys[2 * j + pending.choices[j] as usize];
                y ^ self.hash.hash(pending.rows[j], (pending.index + j as u64) as u128)
            })
            .collect())
    }

    /// One complete batch of transfers.
    pub fn receive(&mut self, chan: &mut Channel, choices: &[bool]) -> Result<Vec<Block>> {
        let p = self.request(chan, choices)?;
        self.finish(chan, p)
    }
}

/// Receiver state between sending the correction matrix and reading the
/// masked messages.
pub struct PendingOt {
    choices: Vec<bool>,
    rows: Vec<Block>,
    index: u64,
}

impl OtExtSender {
    pub fn setup(chan: &mut Channel, rng: &mut Prg) -> Result<Self> {
        let s: u128 = rng.gen();
        let choices: Vec<bool> = (0..KAPPA).map(|i| (s >> i) & 1 == 1).collect();
        let keys = base_ot_receive(chan, rng, &choices)?;
        Ok(OtExtSender {
            s,
            seeds: keys.into_iter().map(CtrPrg::new).collect(),
            offset: 0,
            index: 0,
            hash: Tccr::new(OT_HASH_KEY),
        })
    }

    pub fn send(&mut self, chan: &mut Channel, pairs: &[(Block, Block)]) -> Result<()> {
        let payload = chan.recv_expect(MsgType::OtRound)?;
        let mut r = expect_round(&payload, ROUND_EXT_U)?;
        let m = r.u64()? as usize;
        if m != pairs.len() {
            return Err(Error::Protocol(format!(
                "receiver asked for {m} transfers, sender has {}",
                pairs.len()
            )));
        }
        let blocks = m.div_ceil(128);
        let u = words_le(r.take(KAPPA * blocks * 16)?);
        r.finish()?;
        let offset = self.offset;
        let s = self.s;
        let q_cols: Vec<Vec<Block>> = self
            .seeds
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let mut q = vec![0; blocks];
                g.fill(offset, &mut q);
                if (s >> i) & 1 == 1 {
                    for b in 0..blocks {
                        q[b] ^= u[i * blocks + b];
                    }
                }
                q
            })
            .collect();
        let rows = columns_to_rows(&q_cols, blocks);
        let index = self.index;
        let ys: Vec<[Block; 2]> = (0..m)
            .into_par_iter()
            .map(|j| {
                let tw = (index + j as u64) as u128;
                [
                    pairs[j].0 ^ self.hash.hash(rows[j], tw),
                    pairs[j].1 ^ self.hash.hash(rows[j] ^ s, tw),
                ]
            })
            .collect();
        let mut msg = Vec::with_capacity(1 + 8 + 32 * m);
        msg.push(ROUND_EXT_Y);
        msg.extend_from_slice(&(m as u64).to_le_bytes());
        for y in &ys {
            msg.extend_from_slice(&y[0].to_le_bytes());
            msg.extend_from_slice(&y[1].to_le_bytes());
        }
        chan.send(MsgType::OtRound, msg)?;
        self.offset += blocks as u64;
        self.index += m as u64;
        Ok(())
    }
}
