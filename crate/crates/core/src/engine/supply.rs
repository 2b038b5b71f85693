//! Where a server's online triplets come from: a persisted store produced
//! by the offline phase, or (tests and benchmarks) a seeded trusted dealer.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::ring::{RingParams, Role};
use crate::rng::Seed;
use crate::triplet::{dealer_triplets, TripletSlice, TripletStore};

/// Shared by concurrently running queries, hence `&self` throughout.
pub trait TripletSource: Send + Sync {
    fn role(&self) -> Role;
    fn ring(&self) -> RingParams;
    /// Consumes `[start, start + len)`; a range overlapping an earlier
    /// claim is refused.
    fn claim(&self, start: usize, len: usize) -> Result<TripletSlice>;
    /// First index past every claim so far.
    fn high_water(&self) -> usize;
    /// Total triplets held, if bounded.
    fn capacity(&self) -> Option<usize>;
}

impl TripletSource for Mutex<TripletStore> {
    fn role(&self) -> Role {
        self.lock().unwrap().role()
    }

    fn ring(&self) -> RingParams {
        self.lock().unwrap().ring()
    }

    fn claim(&self, start: usize, len: usize) -> Result<TripletSlice> {
        self.lock().unwrap().claim(start, len)
    }

    fn high_water(&self) -> usize {
        self.lock().unwrap().high_water()
    }

    fn capacity(&self) -> Option<usize> {
        Some(self.lock().unwrap().len())
    }
}

/// Both servers derive the same dealer output for a range from a shared
/// seed and keep their own half. Insecure by construction: a stand-in for
/// the offline phase when only the online protocols are under test.
pub struct DealerSource {
    role: Role,
    ring: RingParams,
    seed: Seed,
    consumed: Mutex<BTreeMap<usize, usize>>,
}

impl DealerSource {
    pub fn new(role: Role, ring: RingParams, seed: Seed) -> Self {
        DealerSource {
            role,
            ring,
            seed,
            consumed: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn pair(ring: RingParams, seed: Seed) -> (DealerSource, DealerSource) {
        (
            DealerSource::new(Role::Server1, ring, seed),
            DealerSource::new(Role::Server2, ring, seed),
        )
    }
}

impl TripletSource for DealerSource {
    fn role(&self) -> Role {
        self.role
    }

    fn ring(&self) -> RingParams {
        self.ring
    }

    fn claim(&self, start: usize, len: usize) -> Result<TripletSlice> {
        if len == 0 {
            return Ok(TripletSlice {
                start,
                ..Default::default()
            });
        }
        let end = start + len;
        {
            let mut consumed = self.consumed.lock().unwrap();
            if let Some((&s, &e)) = consumed.range(..end).next_back() {
                if e > start {
                    return Err(Error::TripletReuse { start: s, end: e });
                }
            }
            consumed.insert(start, end);
        }
        let mut rng = self.seed.rng_for("dealer-range", start as u64);
        let (b1, b2) = dealer_triplets(&self.ring, len, len, &mut rng);
        let b = match self.role {
            Role::Server1 => b1,
            Role::Server2 => b2,
        }
        .into_iter()
        .next()
        .expect("non-empty range yields one batch");
        let mut slice = TripletSlice::from(b);
        slice.start = start;
        Ok(slice)
    }

    fn high_water(&self) -> usize {
        self.consumed.lock().unwrap().values().copied().max().unwrap_or(0)
    }

    fn capacity(&self) -> Option<usize> {
        None
    }
}
