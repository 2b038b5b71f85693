//! Client side: share the input between the servers, collect the two
//! output shares and reconstruct locally.

use std::thread;
use std::time::{Duration, Instant};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::{argmax, ModelDescriptor};
use crate::sharing::{reconstruct_tensor, share_from_bytes, share_tensor, share_to_bytes, RingTensor, SharedTensor};
use crate::transport::{handshake_initiate, tcp_channel, HandshakeConfig, MsgType, PartyKind};

use super::daemon::{dial, CONTROL_SESSION};

#[derive(Clone, Debug)]
pub struct ClientReport {
    pub query: u64,
    pub logits: Vec<f64>,
    pub class: usize,
    /// Encoding and sharing the input.
    pub encode: Duration,
    /// From sending the shares to holding both results.
    pub online: Duration,
    /// Reconstruction and decoding.
    pub decode: Duration,
}

impl ClientReport {
    pub fn lines(&self) -> Vec<String> {
        let logits: Vec<String> = self.logits.iter().map(|v| format!("{v:.6}")).collect();
        vec![
            format!("query.id={}", self.query),
            format!("query.class={}", self.class),
            format!("query.logits={}", logits.join(",")),
            format!("query.encode_ms={:.3}", self.encode.as_secs_f64() * 1e3),
            format!("query.online_ms={:.3}", self.online.as_secs_f64() * 1e3),
            format!("query.decode_ms={:.3}", self.decode.as_secs_f64() * 1e3),
        ]
    }
}

fn exchange(addr: &str, hs: &HandshakeConfig, query: u64, share: &SharedTensor, retries: u32, max_frame: usize) -> Result<SharedTensor> {
    let mut chan = tcp_channel(dial(addr, retries)?)?;
    chan.set_max_frame(max_frame);
    handshake_initiate(&mut chan, hs, query)?;
    chan.send(MsgType::QueryShare, share_to_bytes(share))?;
    share_from_bytes(&chan.recv_expect(MsgType::ResultShare)?)
}

/// Sends one query to servers at `addrs` (server 1 first).
pub fn query_servers<R: RngCore>(
    addrs: &[String; 2],
    desc: &ModelDescriptor,
    image: &[f64],
    retries: u32,
    max_frame: usize,
    rng: &mut R,
) -> Result<ClientReport> {
    let t0 = Instant::now();
    let plain = RingTensor::encode(&desc.ring, desc.input_shape.clone(), image)?;
    let (s1, s2) = share_tensor(&desc.ring, &plain, rng);
    let query = loop {
        let q = rng.next_u64();
        if q != 0 && q != CONTROL_SESSION {
            break q;
        }
    };
    let encode = t0.elapsed();
    let hs = HandshakeConfig {
        party: PartyKind::Client,
        ring: desc.ring,
        he_params_hash: None,
        model_hash: desc.hash(),
    };
    let t1 = Instant::now();
    let (r1, r2) = thread::scope(|sc| {
        let h = sc.spawn(|| exchange(&addrs[1], &hs, query, &s2, retries, max_frame));
        let r1 = exchange(&addrs[0], &hs, query, &s1, retries, max_frame);
        (r1, h.join().unwrap_or_else(|_| Err(Error::Protocol("client thread panicked".into()))))
    });
    let online = t1.elapsed();
    let (y1, y2) = (r1?, r2?);
    let t2 = Instant::now();
    let out = reconstruct_tensor(&y1, &y2)?;
    let logits = out.decode(&desc.ring);
    let decode = t2.elapsed();
    Ok(ClientReport {
        query,
        class: argmax(&logits),
        logits,
        encode,
        online,
        decode,
    })
}
