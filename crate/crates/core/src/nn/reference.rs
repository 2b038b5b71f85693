//! Plaintext forward passes: real arithmetic, and a fixed-point ring
//! simulation that applies the same encodings and truncation points as the
//! secure protocols (with exact floor where the protocols truncate shares).

use super::model::{ConvGeom, Layer, ModelDescriptor};
use super::weights::Model;
use crate::error::{Error, Result};
use crate::ring::{RingParams, RingValue};
use crate::sharing::RingTensor;

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn check_input(desc: &ModelDescriptor, n: usize) -> Result<()> {
    if n != desc.input_len() {
        return Err(Error::Shape(format!(
            "input has {n} values, model takes {:?}",
            desc.input_shape
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Real arithmetic.

fn conv_real(g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.outputs());
    for oc in 0..g.out_c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = 0.0;
                for ic in 0..g.in_c {
                    for ky in 0..g.m {
                        for kx in 0..g.m {
                            if let Some(i) = g.tap(oy, ox, ic, ky, kx) {
                                acc += x[i] * k[((oc * g.in_c + ic) * g.m + ky) * g.m + kx];
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn pool_generic<T: Copy>(shape: &[usize], q: usize, x: &[T], mut fold: impl FnMut(&[T]) -> T) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = Vec::with_capacity(c * (h / q) * (w / q));
    let mut win = Vec::with_capacity(q * q);
    for ch in 0..c {
        for oy in 0..h / q {
            for ox in 0..w / q {
                win.clear();
                for dy in 0..q {
                    for dx in 0..q {
                        win.push(x[(ch * h + oy * q + dy) * w + ox * q + dx]);
                    }
                }
                out.push(fold(&win));
            }
        }
    }
    out
}

/// Layer-by-layer real-valued outputs; the last entry is the logits.
pub fn forward_real(model: &Model, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    check_input(&model.desc, input.len())?;
    let shapes = model.desc.shapes()?;
    let mut weights = model.weights.iter();
    let mut x = input.to_vec();
    let mut outs = Vec::with_capacity(model.desc.layers.len());
    for (layer, shape) in model.desc.layers.iter().zip(&shapes) {
        x = match layer {
            Layer::Conv { .. } => conv_real(&layer.conv_geom().unwrap(), &x, weights.next().unwrap()),
            Layer::Fc { in_dim, .. } => weights
                .next()
                .unwrap()
                .chunks(*in_dim)
                .map(|row| row.iter().zip(&x).map(|(w, v)| w * v).sum())
                .collect(),
            Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            Layer::Square => x.iter().map(|v| v * v).collect(),
            Layer::AvgPool { q } => {
                pool_generic(shape, *q, &x, |w| w.iter().sum::<f64>() / w.len() as f64)
            }
        };
        outs.push(x.clone());
    }
    Ok(outs)
}

// ---------------------------------------------------------------------------
// Ring simulation.

/// Exact ring convolution (no truncation).
pub fn conv_ring_raw(ring: &RingParams, g: &ConvGeom, x: &[RingValue], k: &[RingValue]) -> Vec<RingValue> {
    let mut out = Vec::with_capacity(g.outputs());
    for oc in 0..g.out_c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = RingValue::ZERO;
                for ic in 0..g.in_c {
                    for ky in 0..g.m {
                        for kx in 0..g.m {
                            if let Some(i) = g.tap(oy, ox, ic, ky, kx) {
                                let w = k[((oc * g.in_c + ic) * g.m + ky) * g.m + kx];
                                acc = ring.add(acc, ring.mul(x[i], w));
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Exact ring matrix-vector product, `w` as `[out, in]`.
pub fn fc_ring_raw(ring: &RingParams, x: &[RingValue], w: &[RingValue]) -> Vec<RingValue> {
    w.chunks(x.len())
        .map(|row| {
            row.iter()
                .zip(x)
                .fold(RingValue::ZERO, |acc, (&a, &b)| ring.add(acc, ring.mul(a, b)))
        })
        .collect()
}

pub fn pool_ring(ring: &RingParams, shape: &[usize], q: usize, x: &[RingValue]) -> Vec<RingValue> {
    let bits = 2 * q.trailing_zeros();
    pool_generic(shape, q, x, |w| {
        ring.shift_floor(w.iter().fold(RingValue::ZERO, |a, &b| ring.add(a, b)), bits)
    })
}

fn floor_all(ring: &RingParams, v: Vec<RingValue>) -> Vec<RingValue> {
    v.into_iter().map(|x| ring.shift_floor(x, ring.f)).collect()
}

/// Layer-by-layer ring outputs from encoded weights and an encoded input.
pub fn forward_ring(desc: &ModelDescriptor, weights: &[RingTensor], input: &RingTensor) -> Result<Vec<RingTensor>> {
    desc.validate()?;
    check_input(desc, input.len())?;
    let ring = desc.ring;
    let shapes = desc.shapes()?;
    let mut wi = weights.iter();
    let mut x = input.data.clone();
    let mut outs = Vec::with_capacity(desc.layers.len());
    for (layer, (shape, next)) in desc.layers.iter().zip(shapes.iter().zip(&shapes[1..])) {
        let mut take = || {
            wi.next()
                .map(|t| &t.data)
                .ok_or_else(|| Error::Shape("too few weight tensors".into()))
        };
        x = match layer {
            Layer::Conv { .. } => floor_all(&ring, conv_ring_raw(&ring, &layer.conv_geom().unwrap(), &x, take()?)),
            Layer::Fc { .. } => floor_all(&ring, fc_ring_raw(&ring, &x, take()?)),
            Layer::Square => floor_all(&ring, x.iter().map(|&v| ring.mul(v, v)).collect()),
            Layer::Relu => x
                .iter()
                .map(|&v| if ring.signed(v) > 0 { v } else { RingValue::ZERO })
                .collect(),
            Layer::AvgPool { q } => pool_ring(&ring, shape, *q, &x),
        };
        outs.push(RingTensor::new(next.clone(), x.clone())?);
    }
    Ok(outs)
}

/// Ring-mode logits of a real-valued model on a real-valued input.
pub fn ring_logits(model: &Model, input: &[f64]) -> Result<Vec<f64>> {
    let ring = model.desc.ring;
    let x = RingTensor::encode(&ring, model.desc.input_shape.clone(), input)?;
    let outs = forward_ring(&model.desc, &model.encode()?, &x)?;
    Ok(outs.last().map(|t| t.decode(&ring)).unwrap_or_else(|| x.decode(&ring)))
}

pub fn real_logits(model: &Model, input: &[f64]) -> Result<Vec<f64>> {
    let outs = forward_real(model, input)?;
    Ok(outs.last().cloned().unwrap_or_else(|| input.to_vec()))
}
