//! Benchmark harness. Every timing is the median of at least `runs`
//! samples; sampling continues (up to `max_runs`) while the relative
//! median absolute deviation exceeds `tolerance`.
//!
//! Suites:
//! - `triplet`: packed (full slot vector) against single-slot TRIP,
//!   amortized per triplet
//! - `triplet-async`: a stream of batches, sequential against pipelined,
//!   over a latency-injected loopback
//! - `relu`: one garbled ReLU layer, with an exactness check
//! - `network1`..`network5`: per-layer online table plus sync and async
//!   totals for a batch of queries
//! - `sync-vs-async`: the sync/async comparison for networks 1 to 4

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::gc::GcSession;
use crate::he::{scheme, Backend, HeParams, HeScheme};
use crate::nn::{network_by_name, LayerStat, Model};
use crate::ring::{RingParams, RingValue, Role};
use crate::rng::Seed;
use crate::sharing::{reconstruct_tensor, share_tensor, RingTensor};
use crate::transport::{loopback_pair, Channel};
use crate::triplet::{PackedTripletBatch, StreamPlan, TripEngine};

use super::local::{LocalDeployment, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Triplet,
    TripletAsync,
    Relu,
    Network(u8),
    SyncVsAsync,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        match s.as_str() {
            "triplet" => Ok(Suite::Triplet),
            "triplet-async" | "async-triplet" => Ok(Suite::TripletAsync),
            "relu" => Ok(Suite::Relu),
            "sync-vs-async" => Ok(Suite::SyncVsAsync),
            _ => match s.strip_prefix("network").and_then(|n| n.parse::<u8>().ok()) {
                Some(n @ 1..=5) => Ok(Suite::Network(n)),
                _ => Err(Error::Params(format!(
                    "unknown bench suite {s:?} (triplet, triplet-async, relu, network1..network5, sync-vs-async)"
                ))),
            },
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Suite::Triplet => write!(f, "triplet"),
            Suite::TripletAsync => write!(f, "triplet-async"),
            Suite::Relu => write!(f, "relu"),
            Suite::Network(n) => write!(f, "network{n}"),
            Suite::SyncVsAsync => write!(f, "sync-vs-async"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub runs: usize,
    pub max_runs: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub backend: Backend,
    pub poly_degree: usize,
    /// Single-slot TRIP runs per unpacked sample.
    pub unpacked_per_sample: usize,
    pub async_batches: usize,
    pub async_batch_len: usize,
    pub async_latency: Duration,
    pub relu_len: usize,
    /// Queries per sync/async batch.
    pub queries: usize,
    pub query_latency: Duration,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            runs: 5,
            max_runs: 15,
            tolerance: 0.03,
            seed: 1,
            backend: Backend::Rlwe,
            poly_degree: 4096,
            unpacked_per_sample: 2,
            async_batches: 32,
            async_batch_len: 4096,
            async_latency: Duration::from_millis(5),
            relu_len: 4096,
            queries: 3,
            query_latency: Duration::from_millis(10),
        }
    }
}

/// Samples in seconds.
#[derive(Clone, Debug, Default)]
pub struct Measurement {
    pub samples: Vec<f64>,
}

fn median_of(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl Measurement {
    pub fn median(&self) -> f64 {
        median_of(&self.samples)
    }

    /// Median absolute deviation relative to the median.
    pub fn dispersion(&self) -> f64 {
        let m = self.median();
        let dev: Vec<f64> = self.samples.iter().map(|x| (x - m).abs()).collect();
        if m == 0.0 {
            0.0
        } else {
            median_of(&dev) / m
        }
    }
}

pub fn measure(opts: &BenchOptions, mut sample: impl FnMut() -> Result<f64>) -> Result<Measurement> {
    let mut m = Measurement::default();
    while m.samples.len() < opts.runs.max(1)
        || (m.dispersion() > opts.tolerance && m.samples.len() < opts.max_runs.max(opts.runs))
    {
        m.samples.push(sample()?);
    }
    Ok(m)
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub entries: Vec<(String, String)>,
}

impl BenchReport {
    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    fn timing(&mut self, key: &str, m: &Measurement, scale: f64) {
        self.push(format!("{key}_ms"), format!("{:.6}", m.median() * 1e3 / scale));
        self.push(format!("{key}.runs"), m.samples.len());
        self.push(format!("{key}.dispersion"), format!("{:.4}", m.dispersion()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn lines(&self) -> Vec<String> {
        self.entries.iter().map(|(k, v)| format!("{k}={v}")).collect()
    }

    /// Tab-separated `key value` rows with a header.
    pub fn table(&self) -> String {
        let mut s = String::from("key\tvalue\n");
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}\t{v}\n"));
        }
        s
    }

    pub fn extend(&mut self, other: BenchReport) {
        self.entries.extend(other.entries);
    }
}

pub fn run_suite(suite: Suite, opts: &BenchOptions) -> Result<BenchReport> {
    match suite {
        Suite::Triplet => triplet_packing(opts),
        Suite::TripletAsync => triplet_pipelining(opts),
        Suite::Relu => relu(opts),
        Suite::Network(n) => network(n, opts, true),
        Suite::SyncVsAsync => {
            let mut r = BenchReport::default();
            for n in 1..=4 {
                r.extend(network(n, opts, false)?);
            }
            Ok(r)
        }
    }
}

struct TripPair {
    e1: TripEngine,
    e2: TripEngine,
    c1: Channel,
    c2: Channel,
}

fn trip_pair(ring: RingParams, he: Arc<dyn HeScheme>, latency: Duration, seed: &Seed) -> Result<TripPair> {
    let (mut c1, mut c2) = loopback_pair(latency);
    let he2 = he.clone();
    let s2 = seed.derive("bench-keys", 2);
    let (e1, r2) = thread::scope(|sc| {
        let h = sc.spawn(|| TripEngine::setup(Role::Server2, ring, he2, &mut c2, &s2));
        let e1 = TripEngine::setup(Role::Server1, ring, he, &mut c1, &seed.derive("bench-keys", 1));
        (e1, h.join().expect("key setup thread"))
    });
    Ok(TripPair {
        e1: e1?,
        e2: r2?,
        c1,
        c2,
    })
}

/// Runs `f` on both servers at once; returns both results and wall time.
fn both<T: Send>(
    p: &mut TripPair,
    f: impl Fn(&TripEngine, &mut Channel) -> Result<T> + Sync,
) -> Result<(T, T, f64)> {
    let start = Instant::now();
    let (e1, e2) = (&p.e1, &p.e2);
    let (c1, c2) = (&mut p.c1, &mut p.c2);
    let (r1, r2) = thread::scope(|sc| {
        let h = sc.spawn(|| f(e2, c2));
        let r1 = f(e1, c1);
        (r1, h.join().unwrap_or_else(|_| Err(Error::Protocol("bench thread panicked".into()))))
    });
    let t = start.elapsed().as_secs_f64();
    Ok((r1?, r2?, t))
}

fn check_batches(ring: &RingParams, a: &[PackedTripletBatch], b: &[PackedTripletBatch]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            (0..x.len())
                .filter(|&i| {
                    let (p, q) = (x.get(i), y.get(i));
                    ring.mul(ring.add(p.a, q.a), ring.add(p.b, q.b)) == ring.add(p.z, q.z)
                })
                .count()
        })
        .sum()
}

fn triplet_packing(opts: &BenchOptions) -> Result<BenchReport> {
    let ring = RingParams::default();
    let he = scheme(opts.backend, HeParams::with_degree(opts.poly_degree)?)?;
    let slots = he.slot_count();
    let seed = Seed::from_u64(opts.seed);
    let mut p = trip_pair(ring, he, Duration::ZERO, &seed)?;
    let mut round = 0u64;
    let mut bad = 0usize;
    let packed = measure(opts, || {
        round += 1;
        let s = seed.derive("packed", round);
        let plan = StreamPlan {
            demand: slots,
            batch_len: slots,
            start_batch: 0,
        };
        let (x, y, t) = both(&mut p, |e, c| {
            let mut out = Vec::new();
            e.run_stream(&plan, &s, c, false, &mut |_, b| {
                out.push(b);
                Ok(())
            })?;
            Ok(out)
        })?;
        bad += slots - check_batches(&ring, &x, &y);
        Ok(t)
    })?;
    let unpacked = measure(opts, || {
        round += 1;
        let s = seed.derive("unpacked", round);
        let plan = StreamPlan {
            demand: opts.unpacked_per_sample,
            batch_len: 1,
            start_batch: 0,
        };
        let (x, y, t) = both(&mut p, |e, c| {
            let mut out = Vec::new();
            e.run_stream(&plan, &s, c, false, &mut |_, b| {
                out.push(b);
                Ok(())
            })?;
            Ok(out)
        })?;
        bad += opts.unpacked_per_sample - check_batches(&ring, &x, &y);
        Ok(t)
    })?;
    let mut r = BenchReport::default();
    r.push("triplet.backend", format!("{:?}", opts.backend).to_lowercase());
    r.push("triplet.slots", slots);
    r.timing("triplet.packed.batch", &packed, 1.0);
    r.push("triplet.packed.per_triplet_ms", format!("{:.6}", packed.median() * 1e3 / slots as f64));
    r.timing("triplet.unpacked.sample", &unpacked, 1.0);
    let per_unpacked = unpacked.median() / opts.unpacked_per_sample as f64;
    r.push("triplet.unpacked.per_triplet_ms", format!("{:.6}", per_unpacked * 1e3));
    r.push("triplet.ratio", format!("{:.1}", per_unpacked / (packed.median() / slots as f64)));
    r.push("triplet.invalid", bad);
    Ok(r)
}

fn triplet_pipelining(opts: &BenchOptions) -> Result<BenchReport> {
    let ring = RingParams::default();
    let he = scheme(opts.backend, HeParams::with_degree(opts.poly_degree)?)?;
    let batch_len = opts.async_batch_len.min(he.slot_count());
    let seed = Seed::from_u64(opts.seed);
    let mut p = trip_pair(ring, he, opts.async_latency, &seed)?;
    let plan = StreamPlan {
        demand: opts.async_batches * batch_len,
        batch_len,
        start_batch: 0,
    };
    let mut round = 0u64;
    let mut bad = 0usize;
    let mut sample = |pipelined: bool| -> Result<f64> {
        round += 1;
        let s = seed.derive("stream", round);
        let (x, y, t) = both(&mut p, |e, c| {
            let mut out = Vec::new();
            e.run_stream(&plan, &s, c, pipelined, &mut |_, b| {
                out.push(b);
                Ok(())
            })?;
            Ok(out)
        })?;
        bad += plan.demand - check_batches(&ring, &x, &y);
        Ok(t)
    };
    // Interleave the two schedules so drift affects both alike.
    let (mut sync, mut pipe) = (Measurement::default(), Measurement::default());
    while sync.samples.len() < opts.runs.max(1)
        || ((sync.dispersion() > opts.tolerance || pipe.dispersion() > opts.tolerance)
            && sync.samples.len() < opts.max_runs.max(opts.runs))
    {
        sync.samples.push(sample(false)?);
        pipe.samples.push(sample(true)?);
    }
    let mut r = BenchReport::default();
    r.push("triplet_async.batches", opts.async_batches);
    r.push("triplet_async.batch_len", batch_len);
    r.push("triplet_async.latency_ms", opts.async_latency.as_secs_f64() * 1e3);
    r.timing("triplet_async.sync", &sync, 1.0);
    r.timing("triplet_async.async", &pipe, 1.0);
    r.push("triplet_async.ratio", format!("{:.4}", pipe.median() / sync.median()));
    r.push("triplet_async.invalid", bad);
    Ok(r)
}

/// Values a ReLU benchmark must get right besides random ones.
pub fn relu_edge_values(ring: &RingParams) -> Vec<RingValue> {
    let top = i64::MAX >> (64 - ring.t);
    let (max, min) = (ring.from_signed(top), ring.from_signed(-top - 1));
    vec![
        RingValue(0),
        RingValue(1),
        ring.from_signed(-1),
        max,
        ring.neg(max),
        min,
    ]
}

fn relu(opts: &BenchOptions) -> Result<BenchReport> {
    let ring = RingParams::default();
    let seed = Seed::from_u64(opts.seed);
    let mut rng = seed.rng_for("relu-input", 0);
    let mut vals = relu_edge_values(&ring);
    while vals.len() < opts.relu_len {
        vals.push(ring.reduce(rng.gen::<u64>()));
    }
    vals.truncate(opts.relu_len);
    let plain = RingTensor::new(vec![vals.len()], vals.clone())?;
    let (x1, x2) = share_tensor(&ring, &plain, &mut rng);
    let mut wrong = 0usize;
    let mut round = 0u64;
    let m = measure(opts, || {
        round += 1;
        let (mut c1, mut c2) = loopback_pair(Duration::ZERO);
        let mut g1 = GcSession::new(Role::Server1, ring, seed.derive("relu-bench", round))?;
        let mut g2 = GcSession::new(Role::Server2, ring, seed.derive("relu-bench", round))?;
        let start = Instant::now();
        let (y1, y2) = thread::scope(|sc| {
            let h = sc.spawn(|| g2.relu(&x2, &mut c2));
            let y1 = g1.relu(&x1, &mut c1);
            (y1, h.join().unwrap_or_else(|_| Err(Error::Protocol("relu thread panicked".into()))))
        });
        let t = start.elapsed().as_secs_f64();
        let out = reconstruct_tensor(&y1?, &y2?)?;
        wrong += vals
            .iter()
            .zip(&out.data)
            .filter(|(v, o)| {
                let want = if ring.signed(**v) > 0 { **v } else { RingValue(0) };
                want != **o
            })
            .count();
        Ok(t)
    })?;
    let mut r = BenchReport::default();
    r.push("relu.elements", opts.relu_len);
    r.timing("relu.layer", &m, 1.0);
    r.push("relu.per_element_ms", format!("{:.6}", m.median() * 1e3 / opts.relu_len as f64));
    r.push("relu.wrong", wrong);
    r.push(
        "relu.correct_pct",
        format!("{:.3}", 100.0 * (1.0 - wrong as f64 / (opts.relu_len * m.samples.len()) as f64)),
    );
    Ok(r)
}

fn layer_rows(r: &mut BenchReport, prefix: &str, stats: &[LayerStat]) {
    for s in stats {
        let k = format!("{prefix}.layer{}.{}", s.index, s.kind);
        r.push(format!("{k}.ms"), format!("{:.3}", s.micros as f64 / 1e3));
        r.push(format!("{k}.bytes_sent"), s.bytes_sent);
        r.push(format!("{k}.bytes_received"), s.bytes_received);
        r.push(format!("{k}.frames"), s.frames);
    }
}

fn network(n: u8, opts: &BenchOptions, layers: bool) -> Result<BenchReport> {
    let name = format!("network{n}");
    let desc = network_by_name(&name, RingParams::default())?;
    let seed = Seed::from_u64(opts.seed);
    let model = Model::random(desc.clone(), 1.0, &mut seed.rng_for("bench-model", n as u64));
    let dep = LocalDeployment::with_dealer(&model, opts.query_latency, seed.derive("bench-dep", n as u64))?;
    let mut rng = seed.rng_for("bench-images", n as u64);
    let images: Vec<Vec<f64>> = (0..opts.queries.max(1))
        .map(|_| (0..desc.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let mut r = BenchReport::default();
    r.push(format!("{name}.triplets"), desc.triplet_demand()?);
    r.push(format!("{name}.relu_elements"), desc.relu_sizes()?.iter().sum::<usize>());
    if layers {
        let before = dep.link_counters();
        let q = dep.query(&images[0], false)?;
        let d = dep.link_counters().delta(&before);
        layer_rows(&mut r, &name, &q.traces.0.layers);
        r.push(format!("{name}.query.ms"), format!("{:.3}", q.server_time.as_secs_f64() * 1e3));
        r.push(format!("{name}.query.bytes"), d.total_sent() + d.total_received());
    }
    let (mut sync, mut asy) = (Measurement::default(), Measurement::default());
    while sync.samples.len() < opts.runs.max(1)
        || ((sync.dispersion() > opts.tolerance || asy.dispersion() > opts.tolerance)
            && sync.samples.len() < opts.max_runs.max(opts.runs))
    {
        sync.samples.push(dep.run(&images, Schedule::Sync, false)?.elapsed.as_secs_f64());
        asy.samples.push(dep.run(&images, Schedule::Async, false)?.elapsed.as_secs_f64());
    }
    r.push(format!("{name}.queries"), images.len());
    r.timing(&format!("{name}.sync"), &sync, 1.0);
    r.timing(&format!("{name}.async"), &asy, 1.0);
    r.push(
        format!("{name}.saving_pct"),
        format!("{:.1}", 100.0 * (1.0 - asy.median() / sync.median())),
    );
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for s in ["triplet", "triplet-async", "relu", "network3", "sync_vs_async"] {
            let suite: Suite = s.parse().unwrap();
            assert_eq!(suite.to_string(), s.replace('_', "-"));
        }
        assert!("network6".parse::<Suite>().is_err());
    }

    #[test]
    fn dispersion_and_median() {
        let m = Measurement {
            samples: vec![1.0, 1.1, 0.9, 1.0, 5.0],
        };
        assert_eq!(m.median(), 1.0);
        assert!((m.dispersion() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn small_relu_suite_is_exact() {
        let opts = BenchOptions {
            runs: 1,
            max_runs: 1,
            relu_len: 300,
            ..Default::default()
        };
        let r = run_suite(Suite::Relu, &opts).unwrap();
        assert_eq!(r.get("relu.wrong"), Some("0"));
    }
}
