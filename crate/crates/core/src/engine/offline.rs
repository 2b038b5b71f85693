//! Offline phase: run TRIP until the triplet store holds the demand,
//! appending batch by batch so an interrupted run can resume.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::he::HeScheme;
use crate::ring::{RingParams, Role};
use crate::rng::Seed;
use crate::transport::{Channel, MsgType, Reader};
use crate::triplet::{StoreWriter, StreamPlan, TripEngine, TripletStore};

/// TRIP_CT kind announcing how many triplets a party already holds.
const KIND_RESUME: u8 = 2;

/// Headroom on top of the model's demand for retried queries.
pub const OVERPROVISION: f64 = 1.05;

pub fn provisioned_demand(per_query: usize, queries: usize) -> usize {
    ((per_query * queries) as f64 * OVERPROVISION).ceil() as usize
}

#[derive(Clone, Debug, Default)]
pub struct OfflineOptions {
    pub pipelined: bool,
    /// Abort after this many new batches (crash simulation in tests).
    pub stop_after_batches: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct OfflineReport {
    pub role: Role,
    pub demand: usize,
    pub resumed_from: u64,
    pub total: u64,
    pub batches: u64,
    pub elapsed: Duration,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl OfflineReport {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("offline.role={}", self.role.index()),
            format!("offline.demand={}", self.demand),
            format!("offline.resumed_from={}", self.resumed_from),
            format!("offline.total={}", self.total),
            format!("offline.batches={}", self.batches),
            format!("offline.seconds={:.3}", self.elapsed.as_secs_f64()),
            format!("offline.bytes_sent={}", self.bytes_sent),
            format!("offline.bytes_received={}", self.bytes_received),
        ]
    }
}

fn exchange_resume(chan: &mut Channel, count: u64, batch_len: usize, demand: usize) -> Result<u64> {
    let mut p = vec![KIND_RESUME];
    for v in [count, batch_len as u64, demand as u64] {
        p.extend_from_slice(&v.to_le_bytes());
    }
    chan.send(MsgType::TripCt, p)?;
    let reply = chan.recv_expect(MsgType::TripCt)?;
    let mut r = Reader::new(&reply, "resume point");
    if r.u8()? != KIND_RESUME {
        return Err(Error::Protocol("expected the peer's resume point".into()));
    }
    let (peer, peer_batch, peer_demand) = (r.u64()?, r.u64()?, r.u64()?);
    r.finish()?;
    if peer_batch != batch_len as u64 || peer_demand != demand as u64 {
        return Err(Error::Protocol(format!(
            "peer plans {peer_demand} triplets in batches of {peer_batch}, \
             we plan {demand} in batches of {batch_len}"
        )));
    }
    Ok(peer)
}

/// Brings the store at `path` up to `demand` triplets. Both servers call
/// this with the same demand and batch length; they agree on the last
/// batch both hold completely and regenerate from there.
#[allow(clippy::too_many_arguments)]
pub fn run_offline(
    role: Role,
    ring: RingParams,
    he: Arc<dyn HeScheme>,
    demand: usize,
    batch_len: usize,
    path: &Path,
    seed: &Seed,
    chan: &mut Channel,
    opts: &OfflineOptions,
) -> Result<OfflineReport> {
    let start = Instant::now();
    let before = chan.counters().snapshot();
    let mut writer = if path.exists() {
        StoreWriter::resume(path, role, ring)?
    } else {
        StoreWriter::create(path, role, ring)?
    };
    let peer = exchange_resume(chan, writer.count(), batch_len, demand)?;
    let common = writer.count().min(peer);
    let agreed = if common >= demand as u64 {
        demand as u64
    } else {
        common / batch_len as u64 * batch_len as u64
    };
    if writer.count() > agreed {
        writer.truncate_to(agreed)?;
    }
    let mut batches = 0u64;
    if agreed < demand as u64 {
        let engine = TripEngine::setup(role, ring, he, chan, &seed.derive("offline-keys", agreed))?;
        let plan = StreamPlan {
            demand,
            batch_len,
            start_batch: agreed / batch_len as u64,
        };
        let stop = opts.stop_after_batches;
        let mut interrupted = false;
        let res = engine.run_stream(&plan, &seed.derive("offline-stream", 0), chan, opts.pipelined, &mut |_, b| {
            if stop.is_some_and(|s| batches >= s) {
                interrupted = true;
                return Err(Error::Aborted("offline run interrupted".into()));
            }
            writer.append(&b)?;
            batches += 1;
            Ok(())
        });
        if let Err(e) = res {
            if interrupted || !matches!(e, Error::Aborted(_) | Error::ChannelClosed) {
                chan.abort(&e.to_string());
            }
            return Err(e);
        }
    }
    let d = chan.counters().snapshot().delta(&before);
    Ok(OfflineReport {
        role,
        demand,
        resumed_from: agreed,
        total: writer.count(),
        batches,
        elapsed: start.elapsed(),
        bytes_sent: d.total_sent(),
        bytes_received: d.total_received(),
    })
}

/// Checks the triplet relation on every index of a matching store pair.
/// Returns the number of valid triplets.
pub fn audit_stores(s1: &TripletStore, s2: &TripletStore) -> Result<usize> {
    if s1.len() != s2.len() || s1.ring() != s2.ring() || s1.role() == s2.role() {
        return Err(Error::Shape(format!(
            "stores of {} and {} triplets do not pair up",
            s1.len(),
            s2.len()
        )));
    }
    let ring = s1.ring();
    let (a, b) = (s1.view(0, s1.len())?, s2.view(0, s2.len())?);
    Ok((0..a.len())
        .filter(|&i| {
            let x = ring.add(a.a[i], b.a[i]);
            let y = ring.add(a.b[i], b.b[i]);
            ring.mul(x, y) == ring.add(a.z[i], b.z[i])
        })
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::{scheme, Backend, HeParams};
    use crate::transport::loopback_pair;
    use std::thread;

    fn both(
        dir: &Path,
        demand: usize,
        stop: [Option<u64>; 2],
        he: &Arc<dyn HeScheme>,
    ) -> (Result<OfflineReport>, Result<OfflineReport>) {
        let ring = RingParams::default();
        let (mut a, mut b) = loopback_pair(Duration::ZERO);
        let (p1, p2) = (dir.join("s1.oitr"), dir.join("s2.oitr"));
        let (h1, h2) = (he.clone(), he.clone());
        thread::scope(|sc| {
            let t = sc.spawn(move || {
                let o = OfflineOptions { pipelined: true, stop_after_batches: stop[1] };
                run_offline(Role::Server2, ring, h2, demand, 64, &p2, &Seed::from_u64(2), &mut b, &o)
            });
            let o = OfflineOptions { pipelined: true, stop_after_batches: stop[0] };
            let r1 = run_offline(Role::Server1, ring, h1, demand, 64, &p1, &Seed::from_u64(1), &mut a, &o);
            (r1, t.join().unwrap())
        })
    }

    #[test]
    fn interrupted_run_resumes_to_full_demand() {
        let dir = tempfile::tempdir().unwrap();
        let he = scheme(Backend::DealerMock, HeParams::with_degree(64).unwrap()).unwrap();
        let (r1, r2) = both(dir.path(), 300, [Some(2), None], &he);
        // Server 2 may finish its side before the abort lands.
        assert!(r1.is_err());
        let _ = r2;
        let (r1, r2) = both(dir.path(), 300, [None, None], &he);
        let (r1, r2) = (r1.unwrap(), r2.unwrap());
        assert_eq!(r1.resumed_from, 128);
        assert_eq!((r1.total, r2.total), (300, 300));
        let s1 = TripletStore::open(&dir.path().join("s1.oitr")).unwrap();
        let s2 = TripletStore::open(&dir.path().join("s2.oitr")).unwrap();
        assert_eq!(audit_stores(&s1, &s2).unwrap(), 300);
        // A second run finds nothing to do.
        let (r1, _) = both(dir.path(), 300, [None, None], &he);
        assert_eq!(r1.unwrap().batches, 0);
    }

    #[test]
    fn provisioning_adds_headroom() {
        assert_eq!(provisioned_demand(100, 10), 1050);
    }
}
