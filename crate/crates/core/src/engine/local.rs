//! Both servers and the client in one process, linked by loopback channels
//! with injectable latency. The harness behind the integration tests, the
//! acceptance suite and the benchmarks.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::nn::{argmax, LayerTrace, Model, ModelDescriptor};
use crate::ring::Role;
use crate::rng::Seed;
use crate::sharing::{reconstruct_tensor, share_tensor, RingTensor, SharedTensor};
use crate::transport::{loopback_pair, CounterSnapshot, Mux};
use crate::triplet::{TripletSlice, TripletStore};

use super::server::{QueryTicket, ServerCore};
use super::supply::DealerSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// One query at a time.
    Sync,
    /// All queries in flight at once, each on its own multiplexed session.
    Async,
}

#[derive(Clone, Debug)]
pub struct QueryOutcome {
    pub query: u64,
    pub result: RingTensor,
    pub logits: Vec<f64>,
    pub class: usize,
    pub shares: (SharedTensor, SharedTensor),
    pub traces: (LayerTrace, LayerTrace),
    /// Server 1's view of the query's session traffic.
    pub census: CounterSnapshot,
    pub server_time: Duration,
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub queries: Vec<QueryOutcome>,
    pub elapsed: Duration,
}

struct Prepared {
    ticket: QueryTicket,
    shares: (SharedTensor, SharedTensor),
    triplets: (TripletSlice, TripletSlice),
}

pub struct LocalDeployment {
    desc: ModelDescriptor,
    servers: [Arc<ServerCore>; 2],
    links: [Mux; 2],
    client_seed: Seed,
    next_query: AtomicU64,
}

impl LocalDeployment {
    pub fn new(s1: ServerCore, s2: ServerCore, latency: Duration, client_seed: Seed) -> Result<Self> {
        if s1.role() != Role::Server1 || s2.role() != Role::Server2 {
            return Err(Error::Params("deployment needs server 1 and server 2 in order".into()));
        }
        if s1.model().desc != s2.model().desc {
            return Err(Error::Params("servers hold shares of different models".into()));
        }
        let (a, b) = loopback_pair(latency);
        Ok(LocalDeployment {
            desc: s1.model().desc.clone(),
            servers: [Arc::new(s1), Arc::new(s2)],
            links: [Mux::new(a), Mux::new(b)],
            client_seed,
            next_query: AtomicU64::new(0),
        })
    }

    /// Splits `model` and backs both servers with seeded dealer triplets.
    pub fn with_dealer(model: &Model, latency: Duration, seed: Seed) -> Result<Self> {
        let (m1, m2) = model.split(&mut seed.rng_for("model-split", 0))?;
        let (d1, d2) = DealerSource::pair(model.desc.ring, seed.derive("dealer", 0));
        LocalDeployment::new(
            ServerCore::new(m1, Box::new(d1), seed.derive("server", 1))?,
            ServerCore::new(m2, Box::new(d2), seed.derive("server", 2))?,
            latency,
            seed.derive("client", 0),
        )
    }

    /// Splits `model` and serves from a pair of offline triplet stores.
    pub fn with_stores(model: &Model, stores: (TripletStore, TripletStore), latency: Duration, seed: Seed) -> Result<Self> {
        let (m1, m2) = model.split(&mut seed.rng_for("model-split", 0))?;
        LocalDeployment::new(
            ServerCore::new(m1, Box::new(Mutex::new(stores.0)), seed.derive("server", 1))?,
            ServerCore::new(m2, Box::new(Mutex::new(stores.1)), seed.derive("server", 2))?,
            latency,
            seed.derive("client", 0),
        )
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    pub fn server(&self, role: Role) -> &ServerCore {
        &self.servers[role.index() as usize - 1]
    }

    /// Aggregate traffic on the server-to-server link, seen from server 1.
    pub fn link_counters(&self) -> CounterSnapshot {
        self.links[0].counters().snapshot()
    }

    pub fn query(&self, image: &[f64], test_mode: bool) -> Result<QueryOutcome> {
        let mut b = self.run(&[image.to_vec()], Schedule::Sync, test_mode)?;
        Ok(b.queries.remove(0))
    }

    pub fn run(&self, images: &[Vec<f64>], schedule: Schedule, test_mode: bool) -> Result<BatchOutcome> {
        let ring = self.desc.ring;
        let mut prepared = Vec::with_capacity(images.len());
        for img in images {
            let q = self.next_query.fetch_add(1, Ordering::SeqCst) + 1;
            let plain = RingTensor::encode(&ring, self.desc.input_shape.clone(), img)?;
            let shares = share_tensor(&ring, &plain, &mut self.client_seed.rng_for("query", q));
            let ticket = self.servers[0].issue_ticket(q)?;
            // Claimed up front: triplet supply is offline work and stays
            // out of the timed online phase.
            let triplets = (self.servers[0].claim(&ticket)?, self.servers[1].claim(&ticket)?);
            prepared.push(Prepared { ticket, shares, triplets });
        }
        let start = Instant::now();
        let results: Vec<Result<QueryOutcome>> = match schedule {
            Schedule::Sync => prepared.into_iter().map(|p| self.execute(p, test_mode)).collect(),
            Schedule::Async => thread::scope(|sc| {
                let handles: Vec<_> = prepared
                    .into_iter()
                    .map(|p| sc.spawn(move || self.execute(p, test_mode)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("query thread panicked".into()))))
                    .collect()
            }),
        };
        let elapsed = start.elapsed();
        Ok(BatchOutcome {
            queries: results.into_iter().collect::<Result<_>>()?,
            elapsed,
        })
    }

    fn execute(&self, p: Prepared, test_mode: bool) -> Result<QueryOutcome> {
        let Prepared { ticket, shares, triplets: (k1, k2) } = p;
        let ticket = &ticket;
        let start = Instant::now();
        let mut c1 = self.links[0].open(ticket.query)?;
        let mut c2 = self.links[1].open(ticket.query)?;
        let new_trace = || if test_mode { LayerTrace::test_mode() } else { LayerTrace::production() };
        let (mut t1, mut t2) = (new_trace(), new_trace());
        let s2 = &self.servers[1];
        let (r1, r2) = thread::scope(|sc| {
            let h = sc.spawn(|| s2.run_claimed(ticket, k2, &shares.1, &mut c2, Some(&mut t2)));
            let r1 = self.servers[0].run_claimed(ticket, k1, &shares.0, &mut c1, Some(&mut t1));
            (r1, h.join().unwrap_or_else(|_| Err(Error::Protocol("server 2 panicked".into()))))
        });
        let server_time = start.elapsed();
        // Report the root cause rather than the peer's abort echo.
        let (y1, y2) = match (r1, r2) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), Err(Error::Aborted(_))) | (Err(Error::Aborted(_)), Err(e)) => return Err(e),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let result = reconstruct_tensor(&y1, &y2)?;
        let logits = result.decode(&self.desc.ring);
        Ok(QueryOutcome {
            query: ticket.query,
            class: argmax(&logits),
            logits,
            result,
            shares: (y1, y2),
            traces: (t1, t2),
            census: c1.counters().snapshot(),
            server_time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{real_logits, Layer, Padding};
    use crate::ring::RingParams;
    use rand::Rng;

    fn small_model() -> Model {
        let ring = RingParams::default();
        let desc = ModelDescriptor::new(
            "small",
            ring,
            vec![1, 6, 6],
            vec![
                Layer::conv([1, 6, 6], 2, 3, 1, Padding::Valid),
                Layer::Relu,
                Layer::AvgPool { q: 2 },
                Layer::Fc { in_dim: 8, out_dim: 4 },
                Layer::Square,
                Layer::Fc { in_dim: 4, out_dim: 3 },
            ],
        )
        .unwrap();
        Model::random(desc, 1.0, &mut Seed::from_u64(5).rng_for("w", 0))
    }

    #[test]
    fn sync_and_async_batches_agree_with_plaintext() {
        let model = small_model();
        let dep = LocalDeployment::with_dealer(&model, Duration::from_millis(1), Seed::from_u64(11)).unwrap();
        let mut rng = Seed::from_u64(12).rng_for("img", 0);
        let images: Vec<Vec<f64>> = (0..4).map(|_| (0..36).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        for schedule in [Schedule::Sync, Schedule::Async] {
            let out = dep.run(&images, schedule, false).unwrap();
            assert_eq!(out.queries.len(), 4);
            for (img, q) in images.iter().zip(&out.queries) {
                let want = real_logits(&model, img).unwrap();
                for (a, b) in q.logits.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-2, "{a} vs {b}");
                }
                assert_eq!(q.census.frames(crate::transport::MsgType::GcDecode), 1);
            }
        }
        let d = dep.server(Role::Server1).demand() as u64;
        assert_eq!(dep.server(Role::Server1).issue_ticket(99).unwrap().triplet_start, 8 * d);
    }

    #[test]
    fn test_mode_records_every_layer() {
        let model = small_model();
        let dep = LocalDeployment::with_dealer(&model, Duration::ZERO, Seed::from_u64(2)).unwrap();
        let out = dep.query(&[0.5; 36], true).unwrap();
        assert_eq!(out.traces.0.layers.len(), 6);
        assert_eq!(out.traces.0.outputs.as_ref().unwrap().len(), 6);
        assert!(out.traces.1.outputs.is_some());
    }
}
