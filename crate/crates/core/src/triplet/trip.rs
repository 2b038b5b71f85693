//! Two-party triplet generation over batched homomorphic encryption.
//!
//! Server 1 holds the key pair. Per batch and per CRT prime it sends
//! `[[A1]]`, `[[B1]]`; server 2 answers with
//! `V3 = [[A1]]*B2 + [[B1]]*A2 + [[r]]` for a mask `r < 2^(2t+40)` and keeps
//! `Z2 = A2*B2 - r`. Server 1 decrypts every prime, recombines
//! `v = A1*B2 + A2*B1 + r` exactly and sets `Z1 = v + A1*B1`.
//!
//! All per-batch randomness is derived from a stream seed and the batch
//! index, so the pipelined schedule reproduces the sequential one exactly.

use std::sync::Arc;

use crossbeam_channel::bounded;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use super::{PackedTripletBatch, Triplet};
use crate::error::{Error, Result};
use crate::he::{Ciphertext, CrtBasis, HeScheme, PublicKey, SecretKey, STAT_SECURITY_BITS};
use crate::ring::{RingParams, RingValue, Role};
use crate::rng::Seed;
use crate::transport::{Channel, MsgType, Reader, RecvHalf, SendHalf};

const KIND_KEY: u8 = 0;
const KIND_OPERANDS: u8 = 1;
/// Queue depth between pipeline stages.
const QUEUE_DEPTH: usize = 2;

pub enum TripKeys {
    Server1 { pk: PublicKey, sk: SecretKey },
    Server2 { pk: PublicKey },
}

/// Which triplets a stream produces: `demand` triplets cut into batches of
/// `batch_len`, starting at batch `start_batch` (non-zero when resuming).
#[derive(Clone, Copy, Debug)]
pub struct StreamPlan {
    pub demand: usize,
    pub batch_len: usize,
    pub start_batch: u64,
}

impl StreamPlan {
    pub fn total_batches(&self) -> u64 {
        self.demand.div_ceil(self.batch_len.max(1)) as u64
    }

    pub fn len_of(&self, index: u64) -> usize {
        let start = index as usize * self.batch_len;
        self.demand.saturating_sub(start).min(self.batch_len)
    }
}

pub struct TripEngine {
    ring: RingParams,
    he: Arc<dyn HeScheme>,
    basis: CrtBasis,
    keys: TripKeys,
}

/// Server 2's input-independent work for one batch.
struct MaskPrep {
    r_low: Vec<u64>,
    r_ct: Vec<Ciphertext>,
}

fn reduce_wide(limbs: &[u64; 3], p: u64) -> u64 {
    limbs
        .iter()
        .rev()
        .fold(0u128, |acc, &l| ((acc << 64) | l as u128) % p as u128) as u64
}

impl TripEngine {
    pub fn with_keys(ring: RingParams, he: Arc<dyn HeScheme>, keys: TripKeys) -> Result<Self> {
        let basis = CrtBasis::new(he.params().crt_primes_for(ring.t)?)?;
        Ok(TripEngine {
            ring,
            he,
            basis,
            keys,
        })
    }

    /// Server 1 generates the key pair and ships the public key; server 2
    /// receives it.
    pub fn setup(
        role: Role,
        ring: RingParams,
        he: Arc<dyn HeScheme>,
        chan: &mut Channel,
        seed: &Seed,
    ) -> Result<Self> {
        let keys = match role {
            Role::Server1 => {
                let (pk, sk) = he.keygen(&mut seed.rng_for("he-keygen", 0));
                let mut payload = vec![KIND_KEY];
                payload.extend_from_slice(&pk.to_bytes());
                chan.send(MsgType::TripCt, payload)?;
                TripKeys::Server1 { pk, sk }
            }
            Role::Server2 => {
                let payload = chan.recv_expect(MsgType::TripCt)?;
                if payload.first() != Some(&KIND_KEY) {
                    return Err(Error::Protocol("expected the public key first".into()));
                }
                TripKeys::Server2 {
                    pk: PublicKey::from_bytes(&payload[1..], he.as_ref())?,
                }
            }
        };
        TripEngine::with_keys(ring, he, keys)
    }

    pub fn role(&self) -> Role {
        match self.keys {
            TripKeys::Server1 { .. } => Role::Server1,
            TripKeys::Server2 { .. } => Role::Server2,
        }
    }

    pub fn ring(&self) -> RingParams {
        self.ring
    }

    pub fn scheme(&self) -> &Arc<dyn HeScheme> {
        &self.he
    }

    /// Number of CRT primes each batch is evaluated under.
    pub fn prime_count(&self) -> usize {
        self.basis.primes().len()
    }

    fn pk(&self) -> &PublicKey {
        match &self.keys {
            TripKeys::Server1 { pk, .. } | TripKeys::Server2 { pk } => pk,
        }
    }

    fn check_len(&self, a: &[RingValue], b: &[RingValue]) -> Result<()> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Shape(format!(
                "triplet shares of lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        if a.len() > self.he.slot_count() {
            return Err(Error::Range(format!(
                "{} triplets exceed {} slots per ciphertext",
                a.len(),
                self.he.slot_count()
            )));
        }
        Ok(())
    }

    fn residues(vals: &[RingValue], p: u64) -> Vec<u64> {
        vals.iter().map(|v| v.0 % p).collect()
    }

    /// Local uniform shares for batch `index` of a stream. The role is
    /// mixed in, so two servers handed the same stream seed still draw
    /// independent shares.
    pub fn batch_shares(&self, stream: &Seed, index: u64, len: usize) -> (Vec<RingValue>, Vec<RingValue>, Seed) {
        let seed = stream.derive("trip-batch", index).derive("role", self.role().index() as u64);
        let mut rng = seed.rng_for("ab", 0);
        let a = (0..len).map(|_| self.ring.reduce(rng.next_u64())).collect();
        let b = (0..len).map(|_| self.ring.reduce(rng.next_u64())).collect();
        (a, b, seed)
    }

    // ---- server 1 ---------------------------------------------------------

    fn s1_encrypt(&self, index: u64, a: &[RingValue], b: &[RingValue], seed: &Seed) -> Result<Vec<Vec<u8>>> {
        self.check_len(a, b)?;
        let pk = self.pk();
        self.basis
            .primes()
            .par_iter()
            .enumerate()
            .map(|(j, &p)| {
                let mut rng = seed.rng_for("enc", j as u64);
                let ca = self.he.encrypt(pk, j, &Self::residues(a, p), &mut rng)?;
                let cb = self.he.encrypt(pk, j, &Self::residues(b, p), &mut rng)?;
                let mut out = vec![KIND_OPERANDS];
                out.extend_from_slice(&index.to_le_bytes());
                out.push(j as u8);
                out.extend_from_slice(&(a.len() as u32).to_le_bytes());
                ca.write_into(&mut out);
                cb.write_into(&mut out);
                Ok(out)
            })
            .collect()
    }

    fn s1_finish(
        &self,
        index: u64,
        a: Vec<RingValue>,
        b: Vec<RingValue>,
        responses: Vec<Vec<u8>>,
    ) -> Result<PackedTripletBatch> {
        let TripKeys::Server1 { sk, .. } = &self.keys else {
            return Err(Error::Protocol("server 2 cannot decrypt".into()));
        };
        let k = self.prime_count();
        if responses.len() != k {
            return Err(Error::Protocol(format!("{} responses for {k} primes", responses.len())));
        }
        let slots: Vec<Vec<u64>> = responses
            .par_iter()
            .enumerate()
            .map(|(j, payload)| {
                let mut r = Reader::new(payload, "triplet response");
                let idx = r.u64()?;
                let prime = r.u8()? as usize;
                if idx != index || prime != j {
                    return Err(Error::Protocol(format!(
                        "response for batch {idx} prime {prime}, expected {index}/{j}"
                    )));
                }
                let ct = Ciphertext::read_from(&mut r, self.he.as_ref())?;
                r.finish()?;
                if ct.prime_index() != j {
                    return Err(Error::Protocol("response under the wrong prime".into()));
                }
                self.he.decrypt(sk, &ct)
            })
            .collect::<Result<_>>()?;
        let bound = 2 * self.ring.t + STAT_SECURITY_BITS + 1;
        let mut z = Vec::with_capacity(a.len());
        let mut res = vec![0u64; k];
        for i in 0..a.len() {
            for j in 0..k {
                res[j] = slots[j][i];
            }
            let v = self.basis.recombine_low64(&res, bound)?;
            z.push(self.ring.add(self.ring.reduce(v), self.ring.mul(a[i], b[i])));
        }
        PackedTripletBatch::new(Role::Server1, a, b, z)
    }

    // ---- server 2 ---------------------------------------------------------

    fn sample_masks(&self, len: usize, seed: &Seed) -> Vec<[u64; 3]> {
        let bits = 2 * self.ring.t + STAT_SECURITY_BITS;
        let mut rng = seed.rng_for("mask", 0);
        (0..len)
            .map(|_| {
                let mut l: [u64; 3] = rng.gen();
                let mut rem = bits;
                for limb in l.iter_mut() {
                    if rem >= 64 {
                        rem -= 64;
                    } else {
                        *limb &= (1u64 << rem) - 1;
                        rem = 0;
                    }
                }
                l
            })
            .collect()
    }

    fn s2_prepare_with(&self, masks: &[[u64; 3]], seed: &Seed) -> Result<MaskPrep> {
        let pk = self.pk();
        let r_ct = self
            .basis
            .primes()
            .par_iter()
            .enumerate()
            .map(|(j, &p)| {
                let slots: Vec<u64> = masks.iter().map(|m| reduce_wide(m, p)).collect();
                self.he
                    .encrypt(pk, j, &slots, &mut seed.rng_for("mask-enc", j as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskPrep {
            r_low: masks.iter().map(|m| m[0] & self.ring.mask()).collect(),
            r_ct,
        })
    }

    fn s2_prepare(&self, len: usize, seed: &Seed) -> Result<MaskPrep> {
        self.s2_prepare_with(&self.sample_masks(len, seed), seed)
    }

    fn s2_respond(
        &self,
        index: u64,
        prep: &MaskPrep,
        a: &[RingValue],
        b: &[RingValue],
        requests: Vec<Vec<u8>>,
    ) -> Result<Vec<Vec<u8>>> {
        let k = self.prime_count();
        if requests.len() != k {
            return Err(Error::Protocol(format!("{} requests for {k} primes", requests.len())));
        }
        requests
            .par_iter()
            .enumerate()
            .map(|(j, payload)| {
                let p = self.basis.primes()[j];
                let mut r = Reader::new(payload, "triplet operands");
                if r.u8()? != KIND_OPERANDS {
                    return Err(Error::Protocol("expected triplet operands".into()));
                }
                let idx = r.u64()?;
                let prime = r.u8()? as usize;
                let len = r.u32()? as usize;
                if idx != index || prime != j || len != a.len() {
                    return Err(Error::Protocol(format!(
                        "operands for batch {idx} prime {prime} len {len}, expected {index}/{j}/{}",
                        a.len()
                    )));
                }
                let ca = Ciphertext::read_from(&mut r, self.he.as_ref())?;
                let cb = Ciphertext::read_from(&mut r, self.he.as_ref())?;
                r.finish()?;
                if ca.prime_index() != j || cb.prime_index() != j {
                    return Err(Error::Protocol("operands under the wrong prime".into()));
                }
                // V1 = [[A1]]*B2, V2 = [[B1]]*A2
                let v1 = self.he.plain_mul(&ca, &Self::residues(b, p))?;
                let v2 = self.he.plain_mul(&cb, &Self::residues(a, p))?;
                let v3 = self.he.add(&self.he.add(&v1, &v2)?, &prep.r_ct[j])?;
                let mut out = index.to_le_bytes().to_vec();
                out.push(j as u8);
                v3.write_into(&mut out);
                Ok(out)
            })
            .collect()
    }

    fn s2_output(&self, prep: &MaskPrep, a: Vec<RingValue>, b: Vec<RingValue>) -> Result<PackedTripletBatch> {
        let z = (0..a.len())
            .map(|i| self.ring.sub(self.ring.mul(a[i], b[i]), RingValue(prep.r_low[i])))
            .collect();
        PackedTripletBatch::new(Role::Server2, a, b, z)
    }

    // ---- single batches ---------------------------------------------------

    fn send_all(tx: &mut SendHalf, tag: MsgType, payloads: Vec<Vec<u8>>) -> Result<()> {
        for p in payloads {
            tx.send(tag, p)?;
        }
        Ok(())
    }

    fn recv_all(&self, rx: &mut RecvHalf, tag: MsgType) -> Result<Vec<Vec<u8>>> {
        (0..self.prime_count()).map(|_| rx.recv_expect(tag)).collect()
    }

    /// One packed run: `a`, `b` are this server's shares (equal length, at
    /// most one ciphertext's worth of slots).
    pub fn trip_packed(
        &self,
        index: u64,
        a: Vec<RingValue>,
        b: Vec<RingValue>,
        seed: &Seed,
        chan: &mut Channel,
    ) -> Result<PackedTripletBatch> {
        self.check_len(&a, &b)?;
        let (tx, rx) = chan.halves();
        match self.role() {
            Role::Server1 => {
                let req = self.s1_encrypt(index, &a, &b, seed)?;
                Self::send_all(tx, MsgType::TripCt, req)?;
                let resp = self.recv_all(rx, MsgType::TripResp)?;
                self.s1_finish(index, a, b, resp)
            }
            Role::Server2 => {
                let req = self.recv_all(rx, MsgType::TripCt)?;
                let prep = self.s2_prepare(a.len(), seed)?;
                let resp = self.s2_respond(index, &prep, &a, &b, req)?;
                Self::send_all(tx, MsgType::TripResp, resp)?;
                self.s2_output(&prep, a, b)
            }
        }
    }

    pub fn trip_once(&self, a: RingValue, b: RingValue, seed: &Seed, chan: &mut Channel) -> Result<Triplet> {
        Ok(self.trip_packed(0, vec![a], vec![b], seed, chan)?.get(0))
    }

    // ---- streams ----------------------------------------------------------

    /// Produces every batch of `plan`, handing each to `sink` in order.
    /// With `pipelined`, encryption, transmission and decryption (server 1)
    /// or mask preparation and response (server 2) overlap across batches.
    pub fn run_stream(
        &self,
        plan: &StreamPlan,
        seed: &Seed,
        chan: &mut Channel,
        pipelined: bool,
        sink: &mut dyn FnMut(u64, PackedTripletBatch) -> Result<()>,
    ) -> Result<()> {
        if plan.batch_len == 0 || plan.batch_len > self.he.slot_count() {
            return Err(Error::Params(format!(
                "batch length {} outside 1..={}",
                plan.batch_len,
                self.he.slot_count()
            )));
        }
        let out = if pipelined {
            match self.role() {
                Role::Server1 => self.s1_pipelined(plan, seed, chan, sink),
                Role::Server2 => self.s2_pipelined(plan, seed, chan, sink),
            }
        } else {
            self.sequential(plan, seed, chan, sink)
        };
        if let Err(e) = &out {
            if !matches!(e, Error::Aborted(_) | Error::ChannelClosed) {
                chan.abort(&e.to_string());
            }
        }
        out
    }

    fn sequential(
        &self,
        plan: &StreamPlan,
        seed: &Seed,
        chan: &mut Channel,
        sink: &mut dyn FnMut(u64, PackedTripletBatch) -> Result<()>,
    ) -> Result<()> {
        for i in plan.start_batch..plan.total_batches() {
            let (a, b, bseed) = self.batch_shares(seed, i, plan.len_of(i));
            let batch = self.trip_packed(i, a, b, &bseed, chan)?;
            sink(i, batch)?;
        }
        Ok(())
    }

    fn s1_pipelined(
        &self,
        plan: &StreamPlan,
        seed: &Seed,
        chan: &mut Channel,
        sink: &mut dyn FnMut(u64, PackedTripletBatch) -> Result<()>,
    ) -> Result<()> {
        type Item = (u64, Vec<RingValue>, Vec<RingValue>);
        let (tx, rx) = chan.halves();
        let range = plan.start_batch..plan.total_batches();
        std::thread::scope(|s| {
            let (enc_tx, enc_rx) = bounded::<(Item, Vec<Vec<u8>>)>(QUEUE_DEPTH);
            let (sent_tx, sent_rx) = bounded::<Item>(QUEUE_DEPTH);
            let r2 = range.clone();
            let encrypt = s.spawn(move || -> Result<()> {
                for i in r2 {
                    let (a, b, bseed) = self.batch_shares(seed, i, plan.len_of(i));
                    let req = self.s1_encrypt(i, &a, &b, &bseed)?;
                    if enc_tx.send(((i, a, b), req)).is_err() {
                        break;
                    }
                }
                Ok(())
            });
            let transmit = s.spawn(move || -> Result<()> {
                for (item, req) in enc_rx {
                    Self::send_all(tx, MsgType::TripCt, req)?;
                    if sent_tx.send(item).is_err() {
                        break;
                    }
                }
                Ok(())
            });
            let mut finish = || -> Result<u64> {
                let mut done = 0;
                for (i, a, b) in sent_rx.iter() {
                    let resp = self.recv_all(rx, MsgType::TripResp)?;
                    sink(i, self.s1_finish(i, a, b, resp)?)?;
                    done += 1;
                }
                Ok(done)
            };
            let finished = finish();
            drop(sent_rx);
            let enc = encrypt.join().expect("encrypt stage panicked");
            let trans = transmit.join().expect("transmit stage panicked");
            enc.map_err(|e| e.in_stage("encrypt"))?;
            trans.map_err(|e| e.in_stage("transmit"))?;
            let done = finished.map_err(|e| e.in_stage("decrypt"))?;
            if done != range.end - range.start {
                return Err(Error::Protocol("pipeline ended early".into()).in_stage("decrypt"));
            }
            Ok(())
        })
    }

    fn s2_pipelined(
        &self,
        plan: &StreamPlan,
        seed: &Seed,
        chan: &mut Channel,
        sink: &mut dyn FnMut(u64, PackedTripletBatch) -> Result<()>,
    ) -> Result<()> {
        let range = plan.start_batch..plan.total_batches();
        std::thread::scope(|s| {
            let (prep_tx, prep_rx) = bounded(QUEUE_DEPTH);
            let r2 = range.clone();
            let prepare = s.spawn(move || -> Result<()> {
                for i in r2 {
                    let (a, b, bseed) = self.batch_shares(seed, i, plan.len_of(i));
                    let prep = self.s2_prepare(a.len(), &bseed)?;
                    if prep_tx.send((i, a, b, prep)).is_err() {
                        break;
                    }
                }
                Ok(())
            });
            let (tx, rx) = chan.halves();
            let mut respond = || -> Result<u64> {
                let mut done = 0;
                for (i, a, b, prep) in prep_rx.iter() {
                    let req = self.recv_all(rx, MsgType::TripCt)?;
                    let resp = self.s2_respond(i, &prep, &a, &b, req)?;
                    Self::send_all(tx, MsgType::TripResp, resp)?;
                    sink(i, self.s2_output(&prep, a, b)?)?;
                    done += 1;
                }
                Ok(done)
            };
            let responded = respond();
            drop(prep_rx);
            prepare
                .join()
                .expect("prepare stage panicked")
                .map_err(|e| e.in_stage("prepare"))?;
            let done = responded.map_err(|e| e.in_stage("respond"))?;
            if done != range.end - range.start {
                return Err(Error::Protocol("pipeline ended early".into()).in_stage("respond"));
            }
            Ok(())
        })
    }
}
