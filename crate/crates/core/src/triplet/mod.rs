//! Beaver multiplication triplets: generation (two-party, packed and
//! pipelined, or from a trusted dealer), storage with a consumption ledger,
//! and the online masked-opening multiply.

mod beaver;
mod store;
mod trip;

pub use beaver::{
    beaver_inner_product, beaver_mul, combine, decode_masked, encode_masked, masked_openings,
};
pub use store::{StoreWriter, TripletSlice, TripletStore, STORE_MAGIC};
pub use trip::{StreamPlan, TripEngine, TripKeys};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::ring::{RingParams, RingValue, Role};
use crate::sharing::share;

/// One server's share of a single triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub role: Role,
    pub a: RingValue,
    pub b: RingValue,
    pub z: RingValue,
}

/// One server's shares of `l` triplets produced together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedTripletBatch {
    pub role: Role,
    pub a: Vec<RingValue>,
    pub b: Vec<RingValue>,
    pub z: Vec<RingValue>,
}

impl PackedTripletBatch {
    pub fn new(role: Role, a: Vec<RingValue>, b: Vec<RingValue>, z: Vec<RingValue>) -> Result<Self> {
        if a.len() != b.len() || a.len() != z.len() {
            return Err(Error::Shape(format!(
                "triplet arrays of lengths {}, {}, {}",
                a.len(),
                b.len(),
                z.len()
            )));
        }
        Ok(PackedTripletBatch { role, a, b, z })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn get(&self, i: usize) -> Triplet {
        Triplet {
            role: self.role,
            a: self.a[i],
            b: self.b[i],
            z: self.z[i],
        }
    }

    pub fn unpack(&self) -> Vec<Triplet> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// Trusted-dealer triplets: uniform `a`, `b`, with `z = a*b` and all three
/// split uniformly. Returned as batches of at most `batch_len`.
pub fn dealer_triplets<R: RngCore + ?Sized>(
    ring: &RingParams,
    count: usize,
    batch_len: usize,
    rng: &mut R,
) -> (Vec<PackedTripletBatch>, Vec<PackedTripletBatch>) {
    let batch_len = batch_len.max(1);
    let mut out1 = Vec::new();
    let mut out2 = Vec::new();
    let mut left = count;
    while left > 0 {
        let l = left.min(batch_len);
        let mut b1 = PackedTripletBatch {
            role: Role::Server1,
            a: Vec::with_capacity(l),
            b: Vec::with_capacity(l),
            z: Vec::with_capacity(l),
        };
        let mut b2 = PackedTripletBatch {
            role: Role::Server2,
            ..b1.clone()
        };
        for _ in 0..l {
            let a = ring.reduce(rng.next_u64());
            let b = ring.reduce(rng.next_u64());
            let z = ring.mul(a, b);
            for (v, (d1, d2)) in [a, b, z].into_iter().zip([
                (&mut b1.a, &mut b2.a),
                (&mut b1.b, &mut b2.b),
                (&mut b1.z, &mut b2.z),
            ]) {
                let (s1, s2) = share(ring, v, rng);
                d1.push(s1);
                d2.push(s2);
            }
        }
        out1.push(b1);
        out2.push(b2);
        left -= l;
    }
    (out1, out2)
}
