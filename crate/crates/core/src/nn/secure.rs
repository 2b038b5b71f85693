//! One server's side of a full secure forward pass.

use std::time::Instant;

use super::layers::{conv_layer, fc_layer, pool_layer, square_layer};
use super::model::Layer;
use super::weights::ModelShare;
use crate::error::{Error, Result};
use crate::gc::GcSession;
use crate::sharing::SharedTensor;
use crate::transport::Channel;
use crate::triplet::TripletSlice;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerStat {
    pub index: usize,
    pub kind: &'static str,
    pub micros: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames: u64,
}

/// Per-layer latency and traffic. Output shares are kept only when the
/// trace was created in test mode, so a harness holding both servers'
/// traces can check every layer against the ring oracle.
#[derive(Clone, Debug, Default)]
pub struct LayerTrace {
    pub layers: Vec<LayerStat>,
    pub outputs: Option<Vec<SharedTensor>>,
}

impl LayerTrace {
    pub fn production() -> Self {
        LayerTrace::default()
    }

    pub fn test_mode() -> Self {
        LayerTrace {
            layers: Vec::new(),
            outputs: Some(Vec::new()),
        }
    }

    pub fn total_micros(&self) -> u64 {
        self.layers.iter().map(|l| l.micros).sum()
    }
}

/// Runs every layer of `model` on `input`, drawing exactly the model's
/// triplet demand from the front of `triplets`.
pub fn secure_forward(
    model: &ModelShare,
    input: &SharedTensor,
    triplets: &mut TripletSlice,
    gc: &mut GcSession,
    chan: &mut Channel,
    mut trace: Option<&mut LayerTrace>,
) -> Result<SharedTensor> {
    if input.role() != model.role {
        return Err(Error::Protocol("query share and model share belong to different servers".into()));
    }
    if input.params != model.desc.ring {
        return Err(Error::Params("query ring differs from model ring".into()));
    }
    let shapes = model.desc.shapes()?;
    if input.len() != model.desc.input_len() {
        return Err(Error::Shape(format!(
            "query of {} values for input {:?}",
            input.len(),
            model.desc.input_shape
        )));
    }
    let demands = model.desc.layer_demands()?;
    let mut x = input.with_data(shapes[0].clone(), input.data.clone())?;
    let mut weights = model.weights.iter();
    for (i, layer) in model.desc.layers.iter().enumerate() {
        let start = Instant::now();
        let before = chan.counters().snapshot();
        let t = triplets.take_front(demands[i])?;
        x = match layer {
            Layer::Conv { .. } => {
                let w = weights.next().ok_or_else(|| Error::Shape("missing conv weights".into()))?;
                conv_layer(&layer.conv_geom().unwrap(), &x, w, &t, chan)?
            }
            Layer::Fc { .. } => {
                let w = weights.next().ok_or_else(|| Error::Shape("missing fc weights".into()))?;
                fc_layer(&x, w, &t, chan)?
            }
            Layer::Square => square_layer(&x, &t, chan)?,
            Layer::Relu => gc.relu(&x, chan)?,
            Layer::AvgPool { q } => pool_layer(&x, *q)?,
        };
        if let Some(tr) = trace.as_deref_mut() {
            let d = chan.counters().snapshot().delta(&before);
            tr.layers.push(LayerStat {
                index: i,
                kind: layer.name(),
                micros: start.elapsed().as_micros() as u64,
                bytes_sent: d.total_sent(),
                bytes_received: d.total_received(),
                frames: d.total_frames(),
            });
            if let Some(outs) = tr.outputs.as_mut() {
                outs.push(x.clone());
            }
        }
    }
    Ok(x)
}
