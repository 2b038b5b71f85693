//! Garbled-circuit ReLU: circuit, half-gates garbling, oblivious transfer
//! and the two-party layer protocol.

mod circuit;
mod garble;
mod hash;
mod ot;
mod relu;

pub use circuit::{build_relu_circuit, eval_plain, from_bits, to_bits, CircuitDesc, Gate, Wire};
pub use garble::{decode_outputs, evaluate, evaluate_labels, garble, CircuitBundle, EvaluatorLabelPairs};
pub use hash::{Block, CtrPrg, Tccr};
pub use ot::{base_ot_receive, base_ot_send, OtExtReceiver, OtExtSender, PendingOt};
pub use relu::{relu_layer, GcSession, CHUNK};

#[cfg(test)]
mod tests {
    use std::thread;
    use std::time::Duration;

    use super::*;
    use crate::ring::{RingParams, Role};
    use crate::rng::Seed;
    use crate::sharing::{reconstruct_tensor, share_tensor, RingTensor};
    use crate::transport::{loopback_pair, MsgType};

    fn run_layers(ring: RingParams, inputs: Vec<RingTensor>) -> (Vec<RingTensor>, u64, u64) {
        let mut rng = Seed::from_u64(11).rng();
        let shares: Vec<_> = inputs
            .iter()
            .map(|x| share_tensor(&ring, x, &mut rng))
            .collect();
        let (mut c1, mut c2) = loopback_pair(Duration::ZERO);
        let s1: Vec<_> = shares.iter().map(|s| s.0.clone()).collect();
        let s2: Vec<_> = shares.iter().map(|s| s.1.clone()).collect();
        let h = thread::spawn(move || {
            let mut g = GcSession::new(Role::Server2, ring, Seed::from_u64(2)).unwrap();
            s2.iter()
                .map(|s| relu_layer(&mut g, s, &mut c2).unwrap())
                .collect::<Vec<_>>()
        });
        let mut e = GcSession::new(Role::Server1, ring, Seed::from_u64(1)).unwrap();
        let out1: Vec<_> = s1.iter().map(|s| relu_layer(&mut e, s, &mut c1).unwrap()).collect();
        let out2 = h.join().unwrap();
        let snap = c1.counters().snapshot();
        let outs = out1
            .iter()
            .zip(&out2)
            .map(|(a, b)| reconstruct_tensor(a, b).unwrap())
            .collect();
        (outs, snap.frames(MsgType::GcDecode), snap.frames(MsgType::GcTables))
    }

    #[test]
    fn relu_layer_matches_plaintext() {
        let ring = RingParams::miniature();
        let vals: Vec<f64> = (0..300).map(|i| (i as f64 - 150.0) * 0.37).collect();
        let x = RingTensor::encode(&ring, vec![3, 100], &vals).unwrap();
        let y = RingTensor::encode(&ring, vec![10], &[0.0, -0.0625, 0.0625, 5.0, -5.0, 1.0, 2.0, 3.0, -1.0, 0.5]).unwrap();
        let (outs, decodes, _) = run_layers(ring, vec![x.clone(), y.clone()]);
        for (inp, out) in [x, y].iter().zip(&outs) {
            for (a, b) in inp.data.iter().zip(&out.data) {
                let signed = ring.signed(*a);
                let want = if signed > 0 { a.0 } else { 0 };
                assert_eq!(b.0, want);
            }
        }
        assert_eq!(decodes, 2);
    }

    #[test]
    fn large_layer_is_chunked_with_one_decode() {
        let ring = RingParams::default();
        let n = CHUNK + 10;
        let vals: Vec<f64> = (0..n).map(|i| ((i % 97) as f64 - 48.0) / 8.0).collect();
        let x = RingTensor::encode(&ring, vec![n], &vals).unwrap();
        let (outs, decodes, tables) = run_layers(ring, vec![x.clone()]);
        let back = outs[0].decode(&ring);
        for (v, r) in vals.iter().zip(back) {
            assert_eq!(r, v.max(0.0));
        }
        assert_eq!(decodes, 1);
        assert_eq!(tables, 2);
    }
}
