//! Boolean circuit description and the ReLU-with-remask circuit.
//!
//! Wires carry bits; inputs are little-endian bit vectors. The ReLU circuit
//! takes the evaluator's share `h1`, the garbler's share `h2` and mask `r`
//! and outputs `relu(h1 + h2) - r mod 2^t`:
//!
//! * ADD: ripple-carry adder, one AND per carry;
//! * GT:  `NOT(msb(sum))`, i.e. "sum >= 0" in two's complement;
//! * MUX: every sum bit ANDed with the select bit;
//! * SUB: ripple-borrow subtractor, one AND per borrow.

use crate::error::{Error, Result};

pub type Wire = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Xor { a: Wire, b: Wire, out: Wire },
    And { a: Wire, b: Wire, out: Wire },
    Not { a: Wire, out: Wire },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CircuitDesc {
    pub t: u32,
    pub num_wires: u32,
    pub gates: Vec<Gate>,
    pub evaluator_inputs: Vec<Wire>,
    pub garbler_inputs: Vec<Wire>,
    pub outputs: Vec<Wire>,
}

impl CircuitDesc {
    pub fn and_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::And { .. }))
            .count()
    }

    pub fn xor_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::Xor { .. }))
            .count()
    }

    pub fn not_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::Not { .. }))
            .count()
    }

    /// Checks every wire is defined exactly once, before it is read.
    pub fn validate(&self) -> Result<()> {
        let mut defined = vec![false; self.num_wires as usize];
        let define = |defined: &mut Vec<bool>, w: Wire| -> Result<()> {
            match defined.get_mut(w as usize) {
                None => Err(Error::Params(format!("wire {w} out of range"))),
                Some(true) => Err(Error::Params(format!("wire {w} defined twice"))),
                Some(slot) => {
                    *slot = true;
                    Ok(())
                }
            }
        };
        for &w in self.evaluator_inputs.iter().chain(&self.garbler_inputs) {
            define(&mut defined, w)?;
        }
        for g in &self.gates {
            let (a, b, out) = match *g {
                Gate::Xor { a, b, out } | Gate::And { a, b, out } => (a, b, out),
                Gate::Not { a, out } => (a, a, out),
            };
            for w in [a, b] {
                if !defined.get(w as usize).copied().unwrap_or(false) {
                    return Err(Error::Params(format!("wire {w} read before definition")));
                }
            }
            define(&mut defined, out)?;
        }
        Ok(())
    }
}

struct Builder {
    next: Wire,
    gates: Vec<Gate>,
}

impl Builder {
    fn wire(&mut self) -> Wire {
        self.next += 1;
        self.next - 1
    }

    fn inputs(&mut self, n: u32) -> Vec<Wire> {
        (0..n).map(|_| self.wire()).collect()
    }

    fn xor(&mut self, a: Wire, b: Wire) -> Wire {
        let out = self.wire();
        self.gates.push(Gate::Xor { a, b, out });
        out
    }

    fn and(&mut self, a: Wire, b: Wire) -> Wire {
        let out = self.wire();
        self.gates.push(Gate::And { a, b, out });
        out
    }

    fn not(&mut self, a: Wire) -> Wire {
        let out = self.wire();
        self.gates.push(Gate::Not { a, out });
        out
    }

    fn add(&mut self, x: &[Wire], y: &[Wire]) -> Vec<Wire> {
        let t = x.len();
        let mut out = Vec::with_capacity(t);
        let mut carry: Option<Wire> = None;
        for i in 0..t {
            let xy = self.xor(x[i], y[i]);
            let s = match carry {
                None => xy,
                Some(c) => self.xor(xy, c),
            };
            out.push(s);
            if i + 1 < t {
                carry = Some(match carry {
                    None => self.and(x[i], y[i]),
                    // maj(x, y, c) = c ^ ((x ^ c) & (y ^ c))
                    Some(c) => {
                        let xc = self.xor(x[i], c);
                        let yc = self.xor(y[i], c);
                        let m = self.and(xc, yc);
                        self.xor(c, m)
                    }
                });
            }
        }
        out
    }

    fn sub(&mut self, x: &[Wire], y: &[Wire]) -> Vec<Wire> {
        let t = x.len();
        let mut out = Vec::with_capacity(t);
        let mut borrow: Option<Wire> = None;
        for i in 0..t {
            let xy = self.xor(x[i], y[i]);
            let d = match borrow {
                None => xy,
                Some(b) => self.xor(xy, b),
            };
            out.push(d);
            if i + 1 < t {
                borrow = Some(match borrow {
                    None => {
                        let nx = self.not(x[i]);
                        self.and(nx, y[i])
                    }
                    // maj(!x, y, b) = b ^ (!(x ^ b) & (y ^ b))
                    Some(b) => {
                        let xb = self.xor(x[i], b);
                        let nxb = self.not(xb);
                        let yb = self.xor(y[i], b);
                        let m = self.and(nxb, yb);
                        self.xor(b, m)
                    }
                });
            }
        }
        out
    }
}

/// `relu(h1 + h2) - r` over t-bit two's complement. Evaluator inputs are
/// the bits of `h1`; garbler inputs are the bits of `h2` followed by `r`.
pub fn build_relu_circuit(t: u32) -> Result<CircuitDesc> {
    if !(2..=64).contains(&t) {
        return Err(Error::Params(format!("relu circuit width {t} outside 2..=64")));
    }
    let mut b = Builder {
        next: 0,
        gates: Vec::new(),
    };
    let h1 = b.inputs(t);
    let h2 = b.inputs(t);
    let r = b.inputs(t);
    let sum = b.add(&h1, &h2);
    let nonneg = b.not(sum[t as usize - 1]);
    let muxed: Vec<Wire> = sum.iter().map(|&s| b.and(s, nonneg)).collect();
    let outputs = b.sub(&muxed, &r);
    let mut garbler_inputs = h2;
    garbler_inputs.extend(r);
    Ok(CircuitDesc {
        t,
        num_wires: b.next,
        gates: b.gates,
        evaluator_inputs: h1,
        garbler_inputs,
        outputs,
    })
}

/// Plaintext evaluation, the reference for garbled evaluation.
pub fn eval_plain(desc: &CircuitDesc, evaluator: &[bool], garbler: &[bool]) -> Result<Vec<bool>> {
    if evaluator.len() != desc.evaluator_inputs.len() || garbler.len() != desc.garbler_inputs.len() {
        return Err(Error::Shape("circuit input length".into()));
    }
    let mut w = vec![false; desc.num_wires as usize];
    for (&i, &v) in desc.evaluator_inputs.iter().zip(evaluator) {
        w[i as usize] = v;
    }
    for (&i, &v) in desc.garbler_inputs.iter().zip(garbler) {
        w[i as usize] = v;
    }
    for g in &desc.gates {
        match *g {
            Gate::Xor { a, b, out } => w[out as usize] = w[a as usize] ^ w[b as usize],
            Gate::And { a, b, out } => w[out as usize] = w[a as usize] & w[b as usize],
            Gate::Not { a, out } => w[out as usize] = !w[a as usize],
        }
    }
    Ok(desc.outputs.iter().map(|&o| w[o as usize]).collect())
}

pub fn to_bits(v: u64, t: u32) -> Vec<bool> {
    (0..t).map(|i| (v >> i) & 1 == 1).collect()
}

pub fn from_bits(bits: &[bool]) -> u64 {
    bits.iter()
        .enumerate()
        .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i))
}
