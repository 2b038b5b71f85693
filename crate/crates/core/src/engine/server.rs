//! Per-server online state shared by the in-process deployment and the
//! socket daemon.

use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::gc::GcSession;
use crate::nn::{secure_forward, LayerTrace, ModelShare};
use crate::ring::Role;
use crate::rng::Seed;
use crate::sharing::{ServerScope, SharedTensor};
use crate::transport::{Channel, Reader};
use crate::triplet::TripletSlice;

use super::supply::TripletSource;

/// Which triplets a query uses; issued by server 1, honoured by server 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryTicket {
    pub query: u64,
    pub triplet_start: u64,
    pub triplet_count: u64,
}

impl QueryTicket {
    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::with_capacity(24);
        for v in [self.query, self.triplet_start, self.triplet_count] {
            p.extend_from_slice(&v.to_le_bytes());
        }
        p
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "query ticket");
        let t = QueryTicket {
            query: r.u64()?,
            triplet_start: r.u64()?,
            triplet_count: r.u64()?,
        };
        r.finish()?;
        Ok(t)
    }
}

pub struct ServerCore {
    role: Role,
    model: ModelShare,
    supply: Box<dyn TripletSource>,
    seed: Seed,
    demand: usize,
    next_start: Mutex<usize>,
}

impl ServerCore {
    pub fn new(model: ModelShare, supply: Box<dyn TripletSource>, seed: Seed) -> Result<Self> {
        model.validate()?;
        if supply.role() != model.role {
            return Err(Error::Params(format!(
                "{} triplets paired with a {} model share",
                supply.role(),
                model.role
            )));
        }
        if supply.ring() != model.desc.ring {
            return Err(Error::Params("triplet ring differs from model ring".into()));
        }
        let demand = model.desc.triplet_demand()?;
        let next = supply.high_water();
        Ok(ServerCore {
            role: model.role,
            model,
            supply,
            seed,
            demand,
            next_start: Mutex::new(next),
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn model(&self) -> &ModelShare {
        &self.model
    }

    /// Triplets consumed by one query.
    pub fn demand(&self) -> usize {
        self.demand
    }

    /// Queries the remaining triplets can serve, if bounded.
    pub fn remaining_queries(&self) -> Option<usize> {
        let cap = self.supply.capacity()?;
        let used = self.supply.high_water().max(*self.next_start.lock().unwrap());
        Some(cap.saturating_sub(used) / self.demand.max(1))
    }

    /// Server 1: reserves the next triplet range for `query`.
    pub fn issue_ticket(&self, query: u64) -> Result<QueryTicket> {
        let cap = self.supply.capacity();
        let mut next = self.next_start.lock().unwrap();
        let start = *next;
        if let Some(cap) = cap {
            if start + self.demand > cap {
                return Err(Error::TripletExhausted {
                    needed: self.demand,
                    available: cap.saturating_sub(start),
                });
            }
        }
        *next += self.demand;
        Ok(QueryTicket {
            query,
            triplet_start: start as u64,
            triplet_count: self.demand as u64,
        })
    }

    /// Takes the triplets named by `ticket` from the supply.
    pub fn claim(&self, ticket: &QueryTicket) -> Result<TripletSlice> {
        if ticket.triplet_count as usize != self.demand {
            return Err(Error::Protocol(format!(
                "ticket carries {} triplets, the model needs {}",
                ticket.triplet_count, self.demand
            )));
        }
        self.supply.claim(ticket.triplet_start as usize, self.demand)
    }

    /// Evaluates the model on this server's share of one query.
    pub fn run_query(
        &self,
        ticket: &QueryTicket,
        input: &SharedTensor,
        chan: &mut Channel,
        trace: Option<&mut LayerTrace>,
    ) -> Result<SharedTensor> {
        let triplets = match self.claim(ticket) {
            Ok(t) => t,
            Err(e) => {
                chan.abort(&e.to_string());
                return Err(e);
            }
        };
        self.run_claimed(ticket, triplets, input, chan, trace)
    }

    /// As `run_query`, with the triplets already claimed.
    pub fn run_claimed(
        &self,
        ticket: &QueryTicket,
        mut triplets: TripletSlice,
        input: &SharedTensor,
        chan: &mut Channel,
        trace: Option<&mut LayerTrace>,
    ) -> Result<SharedTensor> {
        let _scope = ServerScope::enter(self.role);
        let mut gc = GcSession::new(self.role, self.model.desc.ring, self.seed.derive("query-gc", ticket.query))?;
        let out = secure_forward(&self.model, input, &mut triplets, &mut gc, chan, trace);
        if let Err(e) = &out {
            if !matches!(e, Error::Aborted(_) | Error::ChannelClosed) {
                chan.abort(&e.to_string());
            }
        }
        out
    }
}
