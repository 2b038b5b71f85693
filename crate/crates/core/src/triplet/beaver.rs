//! Online multiplication with pre-shared triplets.
//!
//! Each party opens `U_r = x_r - a_r` and `V_r = y_r - b_r` in a single
//! MASKED_UV frame; with `U`, `V` public, the product shares are
//! `-UV + x_1 V + y_1 U + z_1` (server 1) and `x_2 V + y_2 U + z_2`.

use rayon::prelude::*;

use super::TripletSlice;
use crate::error::{Error, Result};
use crate::ring::{RingParams, RingValue, Role};
use crate::transport::{Channel, MsgType, Reader};

const PAR_THRESHOLD: usize = 1 << 14;

pub fn masked_openings(
    ring: &RingParams,
    x: &[RingValue],
    y: &[RingValue],
    t: &TripletSlice,
) -> Result<(Vec<RingValue>, Vec<RingValue>)> {
    check_lengths(x, y, t)?;
    let u = x.iter().zip(&t.a).map(|(&x, &a)| ring.sub(x, a)).collect();
    let v = y.iter().zip(&t.b).map(|(&y, &b)| ring.sub(y, b)).collect();
    Ok((u, v))
}

fn check_lengths(x: &[RingValue], y: &[RingValue], t: &TripletSlice) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "operands of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if t.len() != x.len() {
        return Err(Error::Shape(format!(
            "{} products but {} triplets supplied",
            x.len(),
            t.len()
        )));
    }
    Ok(())
}

/// Payload: `count u32 LE`, then `count` U limbs and `count` V limbs.
pub fn encode_masked(ring: &RingParams, u: &[RingValue], v: &[RingValue]) -> Vec<u8> {
    let nb = ring.limb_bytes();
    let mut out = Vec::with_capacity(4 + 2 * u.len() * nb);
    out.extend_from_slice(&(u.len() as u32).to_le_bytes());
    for x in u.iter().chain(v) {
        out.extend_from_slice(&x.0.to_le_bytes()[..nb]);
    }
    out
}

pub fn decode_masked(
    ring: &RingParams,
    payload: &[u8],
    expect: usize,
) -> Result<(Vec<RingValue>, Vec<RingValue>)> {
    let mut r = Reader::new(payload, "masked opening");
    let n = r.u32()? as usize;
    if n != expect {
        return Err(Error::Protocol(format!(
            "peer opened {n} masked values, expected {expect}"
        )));
    }
    let nb = ring.limb_bytes();
    let body = r.take(2 * n * nb)?;
    r.finish()?;
    let mask = ring.mask();
    let mut vals = body.chunks_exact(nb).map(|c| {
        let mut b = [0u8; 8];
        b[..nb].copy_from_slice(c);
        RingValue(u64::from_le_bytes(b) & mask)
    });
    let u: Vec<RingValue> = vals.by_ref().take(n).collect();
    let v: Vec<RingValue> = vals.collect();
    Ok((u, v))
}

/// Local combination step once both openings are known.
pub fn combine(
    ring: &RingParams,
    role: Role,
    x: &[RingValue],
    y: &[RingValue],
    t: &TripletSlice,
    u: &[RingValue],
    v: &[RingValue],
) -> Vec<RingValue> {
    let one = |i: usize| {
        let mut h = ring.add(
            ring.add(ring.mul(x[i], v[i]), ring.mul(y[i], u[i])),
            t.z[i],
        );
        if role == Role::Server1 {
            h = ring.sub(h, ring.mul(u[i], v[i]));
        }
        h
    };
    if x.len() >= PAR_THRESHOLD {
        (0..x.len()).into_par_iter().map(one).collect()
    } else {
        (0..x.len()).map(one).collect()
    }
}

/// Elementwise products of shared vectors, one exchange round in total.
pub fn beaver_mul(
    ring: &RingParams,
    role: Role,
    x: &[RingValue],
    y: &[RingValue],
    t: &TripletSlice,
    chan: &mut Channel,
) -> Result<Vec<RingValue>> {
    let (u_mine, v_mine) = masked_openings(ring, x, y, t)?;
    chan.send(MsgType::MaskedUv, encode_masked(ring, &u_mine, &v_mine))?;
    let payload = chan.recv_expect(MsgType::MaskedUv)?;
    chan.note_round();
    let (u_peer, v_peer) = decode_masked(ring, &payload, x.len())?;
    let u: Vec<RingValue> = u_mine.iter().zip(&u_peer).map(|(&a, &b)| ring.add(a, b)).collect();
    let v: Vec<RingValue> = v_mine.iter().zip(&v_peer).map(|(&a, &b)| ring.add(a, b)).collect();
    Ok(combine(ring, role, x, y, t, &u, &v))
}

pub fn beaver_inner_product(
    ring: &RingParams,
    role: Role,
    x: &[RingValue],
    y: &[RingValue],
    t: &TripletSlice,
    chan: &mut Channel,
) -> Result<RingValue> {
    let prods = beaver_mul(ring, role, x, y, t, chan)?;
    Ok(prods.into_iter().fold(RingValue::ZERO, |acc, p| ring.add(acc, p)))
}
