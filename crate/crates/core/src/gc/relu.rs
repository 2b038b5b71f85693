//! Batched ReLU on additive shares: server 2 garbles
//! `relu(h1 + h2) - R` for a fresh uniform `R` per element and keeps `R`
//! as its output share; server 1 obtains labels for its own share bits by
//! OT, evaluates, and decodes `relu(h) - R`.
//!
//! Per layer the frames are: per chunk of at most [`CHUNK`] elements one
//! GC_TABLES, one GC_LABELS and an OT_ROUND exchange; then a single
//! GC_DECODE closing the session. Base OTs run once per query session, on
//! its first ReLU layer.

use rand::{Rng, RngCore};

use super::circuit::{build_relu_circuit, from_bits, to_bits, CircuitDesc};
use super::garble::{decode_outputs, evaluate_labels, garble, CircuitBundle};
use super::hash::Block;
use super::ot::{OtExtReceiver, OtExtSender};
use crate::error::{Error, Result};
use crate::ring::{RingParams, RingValue, Role};
use crate::rng::Seed;
use crate::sharing::SharedTensor;
use crate::transport::{Channel, MsgType, Reader};

pub const CHUNK: usize = 4096;

enum OtState {
    Idle,
    Sender(OtExtSender),
    Receiver(OtExtReceiver),
}

/// Garbled-circuit state for one query session (one channel).
pub struct GcSession {
    role: Role,
    ring: RingParams,
    circuit: CircuitDesc,
    seed: Seed,
    layers: u64,
    ot: OtState,
}

fn push_blocks(out: &mut Vec<u8>, blocks: &[Block]) {
    for b in blocks {
        out.extend_from_slice(&b.to_le_bytes());
    }
}

fn read_blocks(r: &mut Reader<'_>, n: usize) -> Result<Vec<Block>> {
    (0..n).map(|_| r.u128()).collect()
}

impl GcSession {
    pub fn new(role: Role, ring: RingParams, seed: Seed) -> Result<Self> {
        Ok(GcSession {
            role,
            ring,
            circuit: build_relu_circuit(ring.t)?,
            seed,
            layers: 0,
            ot: OtState::Idle,
        })
    }

    pub fn circuit(&self) -> &CircuitDesc {
        &self.circuit
    }

    /// ReLU layers evaluated so far in this session.
    pub fn layers(&self) -> u64 {
        self.layers
    }

    pub fn relu(&mut self, h: &SharedTensor, chan: &mut Channel) -> Result<SharedTensor> {
        if h.role() != self.role {
            return Err(Error::Protocol(format!(
                "{} share handed to {} session",
                h.role(),
                self.role
            )));
        }
        if h.params != self.ring {
            return Err(Error::Params("share ring differs from session ring".into()));
        }
        let layer_seed = self.seed.derive("relu-layer", self.layers);
        self.layers += 1;
        let out = match self.role {
            Role::Server1 => self.evaluate_layer(h, chan, &layer_seed),
            Role::Server2 => self.garble_layer(h, chan, &layer_seed),
        }?;
        chan.note_round();
        Ok(out)
    }

    fn garble_layer(&mut self, h: &SharedTensor, chan: &mut Channel, seed: &Seed) -> Result<SharedTensor> {
        let t = self.ring.t;
        if matches!(self.ot, OtState::Idle) {
            let mut rng = self.seed.rng_for("ot-base", 0);
            self.ot = OtState::Sender(OtExtSender::setup(chan, &mut rng)?);
        }
        let OtState::Sender(ot) = &mut self.ot else {
            return Err(Error::Protocol("OT state belongs to the other role".into()));
        };
        let mut rng = seed.rng_for("relu", 0);
        let masks: Vec<RingValue> = (0..h.len()).map(|_| self.ring.reduce(rng.next_u64())).collect();
        let delta: Block = rng.gen::<u128>() | 1;
        let hash_key: [u8; 16] = rng.gen();
        let mut decode = Vec::with_capacity(h.len() * t as usize);
        let mut tags = Vec::with_capacity(h.len() * t as usize);
        for start in (0..h.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(h.len());
            let bits: Vec<Vec<bool>> = (start..end)
                .map(|i| {
                    let mut b = to_bits(h.data[i].0, t);
                    b.extend(to_bits(masks[i].0, t));
                    b
                })
                .collect();
            let (bundle, pairs) = garble(&self.circuit, &bits, delta, hash_key, start as u64, seed)?;
            let mut msg = Vec::with_capacity(28 + bundle.tables.len() * 16);
            msg.extend_from_slice(&hash_key);
            msg.extend_from_slice(&(start as u64).to_le_bytes());
            msg.extend_from_slice(&((end - start) as u32).to_le_bytes());
            push_blocks(&mut msg, &bundle.tables);
            chan.send(MsgType::GcTables, msg)?;
            let mut msg = Vec::with_capacity(12 + bundle.garbler_labels.len() * 16);
            msg.extend_from_slice(&(start as u64).to_le_bytes());
            msg.extend_from_slice(&((end - start) as u32).to_le_bytes());
            push_blocks(&mut msg, &bundle.garbler_labels);
            chan.send(MsgType::GcLabels, msg)?;
            ot.send(chan, &pairs.pairs)?;
            decode.extend(bundle.decode);
            tags.extend(bundle.tags);
        }
        let mut msg = Vec::with_capacity(8 + decode.len() / 8 + 1 + tags.len() * 16);
        msg.extend_from_slice(&(decode.len() as u64).to_le_bytes());
        for chunk in decode.chunks(8) {
            msg.push(chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)));
        }
        for tg in &tags {
            msg.extend_from_slice(&tg[0].to_le_bytes());
            msg.extend_from_slice(&tg[1].to_le_bytes());
        }
        chan.send(MsgType::GcDecode, msg)?;
        h.with_data(h.shape.clone(), masks)
    }

    fn evaluate_layer(&mut self, h: &SharedTensor, chan: &mut Channel, _seed: &Seed) -> Result<SharedTensor> {
        let t = self.ring.t as usize;
        if matches!(self.ot, OtState::Idle) {
            let mut rng = self.seed.rng_for("ot-base", 0);
            self.ot = OtState::Receiver(OtExtReceiver::setup(chan, &mut rng)?);
        }
        let OtState::Receiver(ot) = &mut self.ot else {
            return Err(Error::Protocol("OT state belongs to the other role".into()));
        };
        let n_and = self.circuit.and_count();
        let mut labels: Vec<Block> = Vec::with_capacity(h.len() * t);
        let mut key: Option<[u8; 16]> = None;
        for start in (0..h.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(h.len());
            let n = end - start;
            let choices: Vec<bool> = (start..end).flat_map(|i| to_bits(h.data[i].0, t as u32)).collect();
            let pending = ot.request(chan, &choices)?;

            let payload = chan.recv_expect(MsgType::GcTables)?;
            let mut r = Reader::new(&payload, "garbled tables");
            let k: [u8; 16] = r.take(16)?.try_into().unwrap();
            if *key.get_or_insert(k) != k {
                return Err(Error::Protocol("hash key changed within a session".into()));
            }
            if r.u64()? != start as u64 || r.u32()? as usize != n {
                return Err(Error::Protocol("garbled chunk out of order".into()));
            }
            let tables = read_blocks(&mut r, n * 2 * n_and)?;
            r.finish()?;

            let payload = chan.recv_expect(MsgType::GcLabels)?;
            let mut r = Reader::new(&payload, "garbler labels");
            if r.u64()? != start as u64 || r.u32()? as usize != n {
                return Err(Error::Protocol("garbler labels out of order".into()));
            }
            let garbler_labels = read_blocks(&mut r, n * 2 * t)?;
            r.finish()?;

            let ev_labels = ot.finish(chan, pending)?;
            let bundle = CircuitBundle {
                hash_key: k,
                first_element: start as u64,
                elements: n,
                tables,
                garbler_labels,
                decode: Vec::new(),
                tags: Vec::new(),
            };
            labels.extend(evaluate_labels(&self.circuit, &bundle, &ev_labels)?);
        }

        let payload = chan.recv_expect(MsgType::GcDecode)?;
        let mut r = Reader::new(&payload, "output decoding");
        let count = r.u64()? as usize;
        if count != labels.len() {
            return Err(Error::Protocol(format!(
                "decode information for {count} wires, evaluated {}",
                labels.len()
            )));
        }
        let packed = r.take(count.div_ceil(8))?;
        let decode: Vec<bool> = (0..count).map(|i| (packed[i / 8] >> (i % 8)) & 1 == 1).collect();
        let tags: Vec<[u64; 2]> = r
            .take(16 * count)?
            .chunks_exact(16)
            .map(|c| {
                [
                    u64::from_le_bytes(c[..8].try_into().unwrap()),
                    u64::from_le_bytes(c[8..].try_into().unwrap()),
                ]
            })
            .collect();
        r.finish()?;
        let bits = decode_outputs(&self.circuit, key.unwrap_or_default(), 0, &labels, &decode, &tags)?;
        let data = bits.iter().map(|b| RingValue(from_bits(b))).collect();
        h.with_data(h.shape.clone(), data)
    }
}

/// Convenience wrapper: one ReLU layer within `session`.
pub fn relu_layer(session: &mut GcSession, h: &SharedTensor, chan: &mut Channel) -> Result<SharedTensor> {
    session.relu(h, chan)
}
