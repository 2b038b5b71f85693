//! Half-gates garbling with free XOR and point-and-permute.
//!
//! Each wire has a zero label `W0` and one label `W0 ^ delta` (`lsb(delta)
//! = 1`, so the label's low bit is its permute bit). XOR and NOT gates cost
//! nothing; each AND gate contributes two ciphertext rows. Output wires
//! carry a decode bit plus a short hash tag per label so the evaluator can
//! detect a label that belongs to neither value.

use rand::Rng;
use rayon::prelude::*;

use super::circuit::{CircuitDesc, Gate};
use super::hash::{lsb, Block, Tccr};
use crate::error::{Error, Result};
use crate::rng::Seed;

const OUTPUT_TWEAK: u128 = 1 << 31;

#[inline]
fn tweak(element: u64, k: u64) -> u128 {
    ((element as u128) << 32) | k as u128
}

#[inline]
fn tag(h: &Tccr, label: Block, element: u64, o: usize) -> u64 {
    h.hash(label, tweak(element, 0) | OUTPUT_TWEAK | o as u128) as u64
}

/// Garbled material for a batch of independent copies of one circuit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CircuitBundle {
    pub hash_key: [u8; 16],
    /// Index of the first element within its session (tweak domain).
    pub first_element: u64,
    pub elements: usize,
    /// `elements * and_count * 2` rows.
    pub tables: Vec<Block>,
    /// Active labels for the garbler's inputs, `elements * garbler_inputs`.
    pub garbler_labels: Vec<Block>,
    /// Permute bit of each output zero label, `elements * outputs`.
    pub decode: Vec<bool>,
    /// Truncated hashes of the zero and one label of every output wire.
    pub tags: Vec<[u64; 2]>,
}

/// Garbler-side secrets needed to answer the evaluator's OTs.
pub struct EvaluatorLabelPairs {
    pub pairs: Vec<(Block, Block)>,
}

fn garble_one(
    desc: &CircuitDesc,
    h: &Tccr,
    delta: Block,
    element: u64,
    zero: &mut [Block],
    tables: &mut [Block],
) {
    let mut k = 0usize;
    for g in &desc.gates {
        match *g {
            Gate::Xor { a, b, out } => zero[out as usize] = zero[a as usize] ^ zero[b as usize],
            Gate::Not { a, out } => zero[out as usize] = zero[a as usize] ^ delta,
            Gate::And { a, b, out } => {
                let (a0, b0) = (zero[a as usize], zero[b as usize]);
                let (a1, b1) = (a0 ^ delta, b0 ^ delta);
                let (pa, pb) = (lsb(a0), lsb(b0));
                let (j0, j1) = (tweak(element, 2 * k as u64), tweak(element, 2 * k as u64 + 1));
                let (ha0, ha1) = (h.hash(a0, j0), h.hash(a1, j0));
                let (hb0, hb1) = (h.hash(b0, j1), h.hash(b1, j1));
                let tg = ha0 ^ ha1 ^ if pb { delta } else { 0 };
                let wg = ha0 ^ if pa { tg } else { 0 };
                let te = hb0 ^ hb1 ^ a0;
                let we = hb0 ^ if pb { te ^ a0 } else { 0 };
                tables[2 * k] = tg;
                tables[2 * k + 1] = te;
                zero[out as usize] = wg ^ we;
                k += 1;
            }
        }
    }
}

fn eval_one(desc: &CircuitDesc, h: &Tccr, element: u64, w: &mut [Block], tables: &[Block]) {
    let mut k = 0usize;
    for g in &desc.gates {
        match *g {
            Gate::Xor { a, b, out } => w[out as usize] = w[a as usize] ^ w[b as usize],
            Gate::Not { a, out } => w[out as usize] = w[a as usize],
            Gate::And { a, b, out } => {
                let (la, lb) = (w[a as usize], w[b as usize]);
                let (j0, j1) = (tweak(element, 2 * k as u64), tweak(element, 2 * k as u64 + 1));
                let (tg, te) = (tables[2 * k], tables[2 * k + 1]);
                let wg = h.hash(la, j0) ^ if lsb(la) { tg } else { 0 };
                let we = h.hash(lb, j1) ^ if lsb(lb) { te ^ la } else { 0 };
                w[out as usize] = wg ^ we;
                k += 1;
            }
        }
    }
}

/// Garbles `garbler_bits.len()` copies of `desc`. Element `e` of the batch
/// uses tweak domain `first_element + e`, which must be unique within the
/// session's hash key.
pub fn garble(
    desc: &CircuitDesc,
    garbler_bits: &[Vec<bool>],
    delta: Block,
    hash_key: [u8; 16],
    first_element: u64,
    seed: &Seed,
) -> Result<(CircuitBundle, EvaluatorLabelPairs)> {
    if !lsb(delta) {
        return Err(Error::Params("free-XOR offset must have its low bit set".into()));
    }
    let h = Tccr::new(hash_key);
    let n_and = desc.and_count();
    let (ne, ng, no) = (
        desc.evaluator_inputs.len(),
        desc.garbler_inputs.len(),
        desc.outputs.len(),
    );
    if let Some(bad) = garbler_bits.iter().find(|b| b.len() != ng) {
        return Err(Error::Shape(format!(
            "garbler supplied {} input bits, circuit takes {ng}",
            bad.len()
        )));
    }
    struct Part {
        tables: Vec<Block>,
        glabels: Vec<Block>,
        epairs: Vec<(Block, Block)>,
        decode: Vec<bool>,
        tags: Vec<[u64; 2]>,
    }
    let parts: Vec<Part> = garbler_bits
        .par_iter()
        .enumerate()
        .map(|(i, bits)| {
            let e = first_element + i as u64;
            let mut rng = seed.rng_for("gc-labels", e);
            let mut zero = vec![0 as Block; desc.num_wires as usize];
            for &w in desc.evaluator_inputs.iter().chain(&desc.garbler_inputs) {
                zero[w as usize] = rng.gen();
            }
            let mut tables = vec![0 as Block; 2 * n_and];
            garble_one(desc, &h, delta, e, &mut zero, &mut tables);
            let glabels = desc
                .garbler_inputs
                .iter()
                .zip(bits)
                .map(|(&w, &b)| zero[w as usize] ^ if b { delta } else { 0 })
                .collect();
            let epairs = desc
                .evaluator_inputs
                .iter()
                .map(|&w| (zero[w as usize], zero[w as usize] ^ delta))
                .collect();
            let decode = desc.outputs.iter().map(|&w| lsb(zero[w as usize])).collect();
            let tags = desc
                .outputs
                .iter()
                .enumerate()
                .map(|(o, &w)| {
                    let z = zero[w as usize];
                    [tag(&h, z, e, o), tag(&h, z ^ delta, e, o)]
                })
                .collect();
            Part {
                tables,
                glabels,
                epairs,
                decode,
                tags,
            }
        })
        .collect();
    let mut bundle = CircuitBundle {
        hash_key,
        first_element,
        elements: garbler_bits.len(),
        tables: Vec::with_capacity(parts.len() * 2 * n_and),
        garbler_labels: Vec::with_capacity(parts.len() * ng),
        decode: Vec::with_capacity(parts.len() * no),
        tags: Vec::with_capacity(parts.len() * no),
    };
    let mut pairs = Vec::with_capacity(parts.len() * ne);
    for p in parts {
        bundle.tables.extend(p.tables);
        bundle.garbler_labels.extend(p.glabels);
        bundle.decode.extend(p.decode);
        bundle.tags.extend(p.tags);
        pairs.extend(p.epairs);
    }
    Ok((bundle, EvaluatorLabelPairs { pairs }))
}

/// Evaluates every element and returns the raw output labels.
pub fn evaluate_labels(
    desc: &CircuitDesc,
    bundle: &CircuitBundle,
    evaluator_labels: &[Block],
) -> Result<Vec<Block>> {
    let n_and = desc.and_count();
    let (ne, ng) = (desc.evaluator_inputs.len(), desc.garbler_inputs.len());
    let n = bundle.elements;
    if bundle.tables.len() != n * 2 * n_and
        || bundle.garbler_labels.len() != n * ng
        || evaluator_labels.len() != n * ne
    {
        return Err(Error::Garbling("garbled material does not match the circuit".into()));
    }
    let h = Tccr::new(bundle.hash_key);
    let outs: Vec<Vec<Block>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let e = bundle.first_element + i as u64;
            let mut w = vec![0 as Block; desc.num_wires as usize];
            for (k, &wire) in desc.evaluator_inputs.iter().enumerate() {
                w[wire as usize] = evaluator_labels[i * ne + k];
            }
            for (k, &wire) in desc.garbler_inputs.iter().enumerate() {
                w[wire as usize] = bundle.garbler_labels[i * ng + k];
            }
            eval_one(desc, &h, e, &mut w, &bundle.tables[i * 2 * n_and..(i + 1) * 2 * n_and]);
            desc.outputs.iter().map(|&o| w[o as usize]).collect()
        })
        .collect();
    Ok(outs.into_iter().flatten().collect())
}

/// Maps output labels to bits using the decode bits, refusing any label
/// whose tag matches neither wire value.
pub fn decode_outputs(
    desc: &CircuitDesc,
    hash_key: [u8; 16],
    first_element: u64,
    labels: &[Block],
    decode: &[bool],
    tags: &[[u64; 2]],
) -> Result<Vec<Vec<bool>>> {
    let no = desc.outputs.len();
    if labels.len() != decode.len() || labels.len() != tags.len() || labels.len() % no != 0 {
        return Err(Error::Garbling("decode information has the wrong length".into()));
    }
    let h = Tccr::new(hash_key);
    labels
        .par_chunks(no)
        .enumerate()
        .map(|(i, ls)| {
            let e = first_element + i as u64;
            ls.iter()
                .enumerate()
                .map(|(o, &l)| {
                    let k = i * no + o;
                    let bit = lsb(l) ^ decode[k];
                    if tag(&h, l, e, o) != tags[k][bit as usize] {
                        return Err(Error::Garbling(format!(
                            "output label of element {e} wire {o} fails authentication"
                        )));
                    }
                    Ok(bit)
                })
                .collect()
        })
        .collect()
}

pub fn evaluate(
    desc: &CircuitDesc,
    bundle: &CircuitBundle,
    evaluator_labels: &[Block],
) -> Result<Vec<Vec<bool>>> {
    let labels = evaluate_labels(desc, bundle, evaluator_labels)?;
    decode_outputs(
        desc,
        bundle.hash_key,
        bundle.first_element,
        &labels,
        &bundle.decode,
        &bundle.tags,
    )
}
