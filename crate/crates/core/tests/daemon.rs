use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use oinf_core::engine::{query_servers, serve, DealerSource, PeerLink, Schedule, ServeOptions, ServerCore};
use oinf_core::nn::{real_logits, Layer, Model, ModelDescriptor, Padding};
use oinf_core::{Error, RingParams, Seed};

fn model() -> Model {
    let desc = ModelDescriptor::new(
        "tiny",
        RingParams::default(),
        vec![1, 5, 5],
        vec![
            Layer::conv([1, 5, 5], 2, 3, 1, Padding::Valid),
            Layer::Relu,
            Layer::Fc { in_dim: 18, out_dim: 4 },
        ],
    )
    .unwrap();
    Model::random(desc, 1.0, &mut Seed::from_u64(1).rng_for("w", 0))
}

fn listener() -> TcpListener {
    TcpListener::bind("127.0.0.1:0").unwrap()
}

fn cores(m: &Model) -> (ServerCore, ServerCore) {
    let seed = Seed::from_u64(4);
    let (m1, m2) = m.split(&mut seed.rng_for("split", 0)).unwrap();
    let (d1, d2) = DealerSource::pair(m.desc.ring, seed.derive("dealer", 0));
    (
        ServerCore::new(m1, Box::new(d1), seed.derive("s", 1)).unwrap(),
        ServerCore::new(m2, Box::new(d2), seed.derive("s", 2)).unwrap(),
    )
}

fn run(schedule: Schedule, queries: usize) {
    let m = model();
    let (c1, c2) = cores(&m);
    let (peer, l1, l2) = (listener(), listener(), listener());
    let peer_addr = peer.local_addr().unwrap().to_string();
    let addrs = [l1.local_addr().unwrap().to_string(), l2.local_addr().unwrap().to_string()];
    let opts = ServeOptions {
        schedule,
        max_queries: Some(queries as u64),
        ..Default::default()
    };
    let o2 = opts.clone();
    let h2 = thread::spawn(move || serve(c2, PeerLink::Listen(peer), l2, &o2));
    let h1 = thread::spawn(move || serve(c1, PeerLink::Dial(peer_addr), l1, &opts));
    let mut rng = Seed::from_u64(9).rng_for("client", 0);
    let images: Vec<Vec<f64>> = (0..queries).map(|i| (0..25).map(|j| ((i * 25 + j) % 7) as f64 / 7.0).collect()).collect();
    let reports: Vec<_> = thread::scope(|sc| {
        let hs: Vec<_> = images
            .iter()
            .map(|img| {
                let mut r = Seed::from_u64(rand::Rng::gen(&mut rng)).rng_for("q", 0);
                let (addrs, desc) = (&addrs, &m.desc);
                sc.spawn(move || query_servers(addrs, desc, img, 20, 1 << 20, &mut r))
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap().unwrap()).collect()
    });
    for (img, rep) in images.iter().zip(&reports) {
        let want = real_logits(&m, img).unwrap();
        for (a, b) in rep.logits.iter().zip(&want) {
            assert!((a - b).abs() < 1e-2, "{a} vs {b}");
        }
    }
    let r1 = h1.join().unwrap().unwrap();
    let r2 = h2.join().unwrap().unwrap();
    assert_eq!((r1.completed, r2.completed), (queries as u64, queries as u64));
}

#[test]
fn tcp_sync_queries_match_plaintext() {
    run(Schedule::Sync, 3);
}

#[test]
fn tcp_async_queries_match_plaintext() {
    run(Schedule::Async, 4);
}

#[test]
fn client_with_other_model_is_refused() {
    let m = model();
    let (c1, c2) = cores(&m);
    let (peer, l1, l2) = (listener(), listener(), listener());
    let peer_addr = peer.local_addr().unwrap().to_string();
    let addrs = [l1.local_addr().unwrap().to_string(), l2.local_addr().unwrap().to_string()];
    let opts = ServeOptions {
        max_queries: Some(1),
        ..Default::default()
    };
    let o2 = opts.clone();
    let h2 = thread::spawn(move || serve(c2, PeerLink::Listen(peer), l2, &o2));
    let h1 = thread::spawn(move || serve(c1, PeerLink::Dial(peer_addr), l1, &opts));
    let mut other = m.desc.clone();
    other.name = "other".into();
    let err = query_servers(&addrs, &other, &[0.0; 25], 20, 1 << 20, &mut Seed::from_u64(3).rng_for("q", 0)).unwrap_err();
    assert!(matches!(err, Error::HandshakeRejected(ref f) if f == "model"), "{err}");
    let r1 = h1.join().unwrap().unwrap();
    assert_eq!(r1.failed, 1);
    h2.join().unwrap().unwrap();
}

#[test]
fn peer_dial_gives_up() {
    let m = model();
    let (c1, _) = cores(&m);
    let dead = listener().local_addr().unwrap().to_string();
    let opts = ServeOptions {
        connect_retries: 1,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    assert!(serve(c1, PeerLink::Dial(dead), listener(), &opts).is_err());
    assert!(start.elapsed() < Duration::from_secs(5));
}
