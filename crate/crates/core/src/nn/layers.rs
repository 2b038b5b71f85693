//! Secure layer protocols on additive shares.
//!
//! Conv, FC and square run every product of the layer through one
//! [`beaver_mul`] call (one MASKED_UV exchange), sum locally and truncate by
//! `f`. Pooling is local: window sums truncated by `2 log2 q`.

use rayon::prelude::*;

use super::model::ConvGeom;
use crate::error::{Error, Result};
use crate::ring::{RingParams, RingValue};
use crate::sharing::SharedTensor;
use crate::transport::Channel;
use crate::triplet::{beaver_mul, TripletSlice};

const PAR_THRESHOLD: usize = 1 << 15;

fn check_triplets(t: &TripletSlice, need: usize, layer: &str) -> Result<()> {
    if t.len() < need {
        log::error!("{layer} layer needs {need} triplets, {} supplied", t.len());
        return Err(Error::TripletExhausted {
            needed: need,
            available: t.len(),
        });
    }
    if t.len() > need {
        return Err(Error::Shape(format!("{layer} layer handed {} triplets for {need} products", t.len())));
    }
    Ok(())
}

fn group_sums(ring: &RingParams, prods: &[RingValue], group: usize) -> Vec<RingValue> {
    let sum = |c: &[RingValue]| c.iter().fold(RingValue::ZERO, |acc, &p| ring.add(acc, p));
    if prods.len() >= PAR_THRESHOLD {
        prods.par_chunks(group).map(sum).collect()
    } else {
        prods.chunks(group).map(sum).collect()
    }
}

/// im2col operands: `x[o * window + w]` is image tap `w` of output `o`
/// (zero in the padding), `y[o * window + w]` the matching kernel entry.
fn conv_operands(g: &ConvGeom, image: &[RingValue], kernel: &[RingValue]) -> (Vec<RingValue>, Vec<RingValue>) {
    let win = g.window();
    let n = g.outputs() * win;
    let mut x = vec![RingValue::ZERO; n];
    let mut y = vec![RingValue::ZERO; n];
    let per_channel = g.out_h * g.out_w;
    let fill = |o: usize, xs: &mut [RingValue], ys: &mut [RingValue]| {
        let oc = o / per_channel;
        let (oy, ox) = ((o % per_channel) / g.out_w, o % g.out_w);
        let kbase = oc * win;
        let mut w = 0;
        for ic in 0..g.in_c {
            for ky in 0..g.m {
                for kx in 0..g.m {
                    if let Some(i) = g.tap(oy, ox, ic, ky, kx) {
                        xs[w] = image[i];
                    }
                    ys[w] = kernel[kbase + w];
                    w += 1;
                }
            }
        }
    };
    if n >= PAR_THRESHOLD {
        x.par_chunks_mut(win)
            .zip(y.par_chunks_mut(win))
            .enumerate()
            .for_each(|(o, (xs, ys))| fill(o, xs, ys));
    } else {
        for (o, (xs, ys)) in x.chunks_mut(win).zip(y.chunks_mut(win)).enumerate() {
            fill(o, xs, ys);
        }
    }
    (x, y)
}

/// Convolution before truncation: the shares reconstruct to the exact ring
/// convolution of the shared image and kernel.
pub fn conv_products(
    g: &ConvGeom,
    image: &SharedTensor,
    kernel: &SharedTensor,
    triplets: &TripletSlice,
    chan: &mut Channel,
) -> Result<SharedTensor> {
    let ring = image.params;
    if image.len() != g.in_c * g.in_h * g.in_w || kernel.len() != g.out_c * g.window() {
        return Err(Error::Shape(format!(
            "conv operands {:?} and {:?} do not fit {g:?}",
            image.shape, kernel.shape
        )));
    }
    check_triplets(triplets, g.outputs() * g.window(), "conv")?;
    let (x, y) = conv_operands(g, &image.data, &kernel.data);
    let prods = beaver_mul(&ring, image.role(), &x, &y, triplets, chan)?;
    image.with_data(vec![g.out_c, g.out_h, g.out_w], group_sums(&ring, &prods, g.window()))
}

pub fn conv_layer(
    g: &ConvGeom,
    image: &SharedTensor,
    kernel: &SharedTensor,
    triplets: &TripletSlice,
    chan: &mut Channel,
) -> Result<SharedTensor> {
    truncated(conv_products(g, image, kernel, triplets, chan)?, image.params.f)
}

/// `W k` before truncation; `weights` is `[out, in]`.
pub fn fc_products(
    input: &SharedTensor,
    weights: &SharedTensor,
    triplets: &TripletSlice,
    chan: &mut Channel,
) -> Result<SharedTensor> {
    let ring = input.params;
    let n_in = input.len();
    if n_in == 0 || weights.len() % n_in != 0 {
        return Err(Error::Shape(format!(
            "fc weights {:?} for {n_in} inputs",
            weights.shape
        )));
    }
    let n_out = weights.len() / n_in;
    check_triplets(triplets, n_in * n_out, "fc")?;
    let x: Vec<RingValue> = input.data.iter().copied().cycle().take(n_in * n_out).collect();
    let prods = beaver_mul(&ring, input.role(), &x, &weights.data, triplets, chan)?;
    input.with_data(vec![n_out], group_sums(&ring, &prods, n_in))
}

pub fn fc_layer(
    input: &SharedTensor,
    weights: &SharedTensor,
    triplets: &TripletSlice,
    chan: &mut Channel,
) -> Result<SharedTensor> {
    truncated(fc_products(input, weights, triplets, chan)?, input.params.f)
}

/// Elementwise `x^2` before truncation.
pub fn square_products(x: &SharedTensor, triplets: &TripletSlice, chan: &mut Channel) -> Result<SharedTensor> {
    check_triplets(triplets, x.len(), "square")?;
    let prods = beaver_mul(&x.params, x.role(), &x.data, &x.data, triplets, chan)?;
    x.with_data(x.shape.clone(), prods)
}

pub fn square_layer(x: &SharedTensor, triplets: &TripletSlice, chan: &mut Channel) -> Result<SharedTensor> {
    truncated(square_products(x, triplets, chan)?, x.params.f)
}

/// Local average pooling over `q x q` windows of a `(c, h, w)` share.
pub fn pool_layer(x: &SharedTensor, q: usize) -> Result<SharedTensor> {
    if q == 0 || !q.is_power_of_two() {
        return Err(Error::Params(format!("pool window {q} is not a power of two")));
    }
    let [c, h, w] = x.shape[..] else {
        return Err(Error::Shape(format!("pooling needs (c,h,w), got {:?}", x.shape)));
    };
    if h % q != 0 || w % q != 0 {
        return Err(Error::Shape(format!("pool window {q} does not divide {h}x{w}")));
    }
    let ring = x.params;
    let (oh, ow) = (h / q, w / q);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = RingValue::ZERO;
                for dy in 0..q {
                    for dx in 0..q {
                        s = ring.add(s, x.data[(ch * h + oy * q + dy) * w + ox * q + dx]);
                    }
                }
                out.push(s);
            }
        }
    }
    ring.truncate_slice(&mut out, x.role(), 2 * q.trailing_zeros());
    x.with_data(vec![c, oh, ow], out)
}

fn truncated(mut s: SharedTensor, bits: u32) -> Result<SharedTensor> {
    let role = s.role();
    s.params.truncate_slice(&mut s.data, role, bits);
    Ok(s)
}
