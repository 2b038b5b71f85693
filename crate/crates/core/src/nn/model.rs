//! Layer descriptors, shape inference, triplet demand and the reference
//! architectures.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ring::RingParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Centered windows of radius (m-1)/2, zero fill; keeps the spatial
    /// size at stride 1.
    Same,
    Valid,
    Explicit(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        /// (channels, height, width) of the input.
        in_shape: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Relu,
    AvgPool {
        q: usize,
    },
    Fc {
        in_dim: usize,
        out_dim: usize,
    },
    Square,
}

/// Geometry of a convolution after resolving padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub m: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn window(&self) -> usize {
        self.in_c * self.m * self.m
    }

    pub fn outputs(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    /// Flat input index of window tap (ic, ky, kx) for output position
    /// (oy, ox), or `None` when it falls in the zero padding.
    #[inline]
    pub fn tap(&self, oy: usize, ox: usize, ic: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.in_h && x < self.in_w).then(|| (ic * self.in_h + y) * self.in_w + x)
    }
}

impl Layer {
    pub fn conv(in_shape: [usize; 3], out_channels: usize, kernel: usize, stride: usize, padding: Padding) -> Layer {
        Layer::Conv {
            in_shape,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::AvgPool { .. } => "pool",
            Layer::Fc { .. } => "fc",
            Layer::Square => "square",
        }
    }

    pub fn conv_geom(&self) -> Option<ConvGeom> {
        let Layer::Conv {
            in_shape: [c, h, w],
            out_channels,
            kernel,
            stride,
            padding,
        } = *self
        else {
            return None;
        };
        let pad = match padding {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
            Padding::Explicit(p) => p as usize,
        };
        let span = |n: usize| (n + 2 * pad).checked_sub(kernel).map(|d| d / stride.max(1) + 1);
        Some(ConvGeom {
            in_c: c,
            in_h: h,
            in_w: w,
            out_c: out_channels,
            m: kernel,
            stride,
            pad,
            out_h: span(h).unwrap_or(0),
            out_w: span(w).unwrap_or(0),
        })
    }

    /// Shape of the weight tensor, if the layer has one.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            Layer::Conv {
                in_shape,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_shape[0], kernel, kernel]),
            Layer::Fc { in_dim, out_dim } => Some(vec![out_dim, in_dim]),
            _ => None,
        }
    }

    /// Output shape for `input`, validating compatibility.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let n: usize = input.iter().product();
        match *self {
            Layer::Conv {
                in_shape,
                kernel,
                stride,
                out_channels,
                ..
            } => {
                if input != in_shape {
                    return Err(Error::Shape(format!(
                        "conv expects input {in_shape:?}, got {input:?}"
                    )));
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(Error::Params("conv with zero kernel, stride or channels".into()));
                }
                let g = self.conv_geom().unwrap();
                if g.out_h == 0 || g.out_w == 0 {
                    return Err(Error::Shape(format!("{kernel}x{kernel} kernel larger than padded input {input:?}")));
                }
                Ok(vec![g.out_c, g.out_h, g.out_w])
            }
            Layer::Relu | Layer::Square => Ok(input.to_vec()),
            Layer::AvgPool { q } => {
                if q == 0 || !q.is_power_of_two() {
                    return Err(Error::Params(format!("pool window {q} is not a power of two")));
                }
                let [c, h, w] = input else {
                    return Err(Error::Shape(format!("pooling needs a (c,h,w) input, got {input:?}")));
                };
                if h % q != 0 || w % q != 0 {
                    return Err(Error::Shape(format!("pool window {q} does not divide {h}x{w}")));
                }
                Ok(vec![*c, h / q, w / q])
            }
            Layer::Fc { in_dim, out_dim } => {
                if n != in_dim || out_dim == 0 {
                    return Err(Error::Shape(format!(
                        "fc expects {in_dim} inputs, got {n} ({input:?})"
                    )));
                }
                Ok(vec![out_dim])
            }
        }
    }

    /// Triplets consumed: one per secure multiplication.
    pub fn triplet_demand(&self, input: &[usize]) -> usize {
        match *self {
            Layer::Conv { .. } => {
                let g = self.conv_geom().unwrap();
                g.outputs() * g.window()
            }
            Layer::Fc { in_dim, out_dim } => in_dim * out_dim,
            Layer::Square => input.iter().product(),
            Layer::Relu | Layer::AvgPool { .. } => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub ring: RingParams,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl ModelDescriptor {
    pub fn new(name: &str, ring: RingParams, input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let d = ModelDescriptor {
            name: name.to_string(),
            ring,
            input_shape,
            layers,
        };
        d.validate()?;
        Ok(d)
    }

    /// Input shape of every layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![self.input_shape.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let next = l
                .output_shape(out.last().unwrap())
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", l.name())))?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        RingParams::new(self.ring.t, self.ring.f)?;
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Shape(format!("input shape {:?}", self.input_shape)));
        }
        self.shapes().map(|_| ())
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().unwrap())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Per-layer triplet demand.
    pub fn layer_demands(&self) -> Result<Vec<usize>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| l.triplet_demand(s))
            .collect())
    }

    pub fn triplet_demand(&self) -> Result<usize> {
        Ok(self.layer_demands()?.iter().sum())
    }

    /// Elements passing through each ReLU layer.
    pub fn relu_sizes(&self) -> Result<Vec<usize>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| matches!(l, Layer::Relu))
            .map(|(_, s)| s.iter().product())
            .collect())
    }

    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().filter_map(Layer::weight_shape).collect()
    }

    pub fn count(&self, pred: impl Fn(&Layer) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(l)).count()
    }

    /// First 8 bytes of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("descriptor serializes");
        let d = Sha256::digest(&json);
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

/// Fully connected 784-128-128-10 with square activations.
pub fn network1(ring: RingParams) -> ModelDescriptor {
    ModelDescriptor::new(
        "network1",
        ring,
        vec![1, 28, 28],
        vec![
            Layer::Fc { in_dim: 784, out_dim: 128 },
            Layer::Square,
            Layer::Fc { in_dim: 128, out_dim: 128 },
            Layer::Square,
            Layer::Fc { in_dim: 128, out_dim: 10 },
        ],
    )
    .unwrap()
}

/// 5x5 stride-2 conv to 5x13x13, ReLU, FC 845-100, ReLU, FC 100-10.
pub fn network2(ring: RingParams) -> ModelDescriptor {
    ModelDescriptor::new(
        "network2",
        ring,
        vec![1, 28, 28],
        vec![
            Layer::conv([1, 28, 28], 5, 5, 2, Padding::Explicit(1)),
            Layer::Relu,
            Layer::Fc { in_dim: 845, out_dim: 100 },
            Layer::Relu,
            Layer::Fc { in_dim: 100, out_dim: 10 },
        ],
    )
    .unwrap()
}

/// Square-activation CNN; its shape-preserving pools are q=1.
pub fn network3(ring: RingParams) -> ModelDescriptor {
    ModelDescriptor::new(
        "network3",
        ring,
        vec![1, 28, 28],
        vec![
            Layer::conv([1, 28, 28], 5, 5, 2, Padding::Explicit(1)),
            Layer::Square,
            Layer::AvgPool { q: 1 },
            Layer::conv([5, 13, 13], 50, 5, 2, Padding::Valid),
            Layer::AvgPool { q: 1 },
            Layer::Fc { in_dim: 1250, out_dim: 100 },
            Layer::Square,
            Layer::Fc { in_dim: 100, out_dim: 10 },
        ],
    )
    .unwrap()
}

/// MNIST CNN: two 5x5 convs (valid), ReLU, 2x2 average pools, FC 256-100-10.
pub fn network4(ring: RingParams) -> ModelDescriptor {
    ModelDescriptor::new(
        "network4",
        ring,
        vec![1, 28, 28],
        vec![
            Layer::conv([1, 28, 28], 16, 5, 1, Padding::Valid),
            Layer::Relu,
            Layer::AvgPool { q: 2 },
            Layer::conv([16, 12, 12], 16, 5, 1, Padding::Valid),
            Layer::Relu,
            Layer::AvgPool { q: 2 },
            Layer::Fc { in_dim: 256, out_dim: 100 },
            Layer::Relu,
            Layer::Fc { in_dim: 100, out_dim: 10 },
        ],
    )
    .unwrap()
}

/// CIFAR-10 CNN: seven convs with ReLU, two 2x2 pools, FC 1024-10.
pub fn network5(ring: RingParams) -> ModelDescriptor {
    let c3 = |c: usize, hw: usize| Layer::conv([c, hw, hw], 64, 3, 1, Padding::Same);
    ModelDescriptor::new(
        "network5",
        ring,
        vec![3, 32, 32],
        vec![
            c3(3, 32),
            Layer::Relu,
            c3(64, 32),
            Layer::Relu,
            Layer::AvgPool { q: 2 },
            c3(64, 16),
            Layer::Relu,
            c3(64, 16),
            Layer::Relu,
            Layer::AvgPool { q: 2 },
            c3(64, 8),
            Layer::Relu,
            Layer::conv([64, 8, 8], 64, 1, 1, Padding::Same),
            Layer::Relu,
            Layer::conv([64, 8, 8], 16, 1, 1, Padding::Same),
            Layer::Relu,
            Layer::Fc { in_dim: 1024, out_dim: 10 },
        ],
    )
    .unwrap()
}

pub fn network_by_name(name: &str, ring: RingParams) -> Result<ModelDescriptor> {
    Ok(match name {
        "network1" => network1(ring),
        "network2" => network2(ring),
        "network3" => network3(ring),
        "network4" => network4(ring),
        "network5" => network5(ring),
        _ => return Err(Error::Params(format!("unknown network `{name}`"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shapes() {
        let r = RingParams::default();
        let n4 = network4(r);
        let s = n4.shapes().unwrap();
        assert_eq!(s[1], vec![16, 24, 24]);
        assert_eq!(s[3], vec![16, 12, 12]);
        assert_eq!(s[4], vec![16, 8, 8]);
        assert_eq!(s[6], vec![16, 4, 4]);
        assert_eq!(n4.output_shape().unwrap(), vec![10]);
        assert_eq!(network2(r).shapes().unwrap()[1], vec![5, 13, 13]);
        assert_eq!(network3(r).shapes().unwrap()[4], vec![50, 5, 5]);
        assert_eq!(network5(r).output_shape().unwrap(), vec![10]);
        assert_eq!(network1(r).output_shape().unwrap(), vec![10]);
    }

    #[test]
    fn demand_counts_every_multiply() {
        let n4 = network4(RingParams::default());
        assert_eq!(
            n4.layer_demands().unwrap(),
            vec![16 * 576 * 25, 0, 0, 16 * 64 * 400, 0, 0, 25600, 0, 1000]
        );
        let n1 = network1(RingParams::default());
        assert_eq!(n1.triplet_demand().unwrap(), 784 * 128 + 128 + 128 * 128 + 128 + 1280);
        assert_eq!(n4.relu_sizes().unwrap(), vec![9216, 1024, 100]);
    }

    #[test]
    fn same_padding_keeps_size() {
        let l = Layer::conv([2, 4, 4], 3, 3, 1, Padding::Same);
        assert_eq!(l.output_shape(&[2, 4, 4]).unwrap(), vec![3, 4, 4]);
        let g = l.conv_geom().unwrap();
        assert_eq!(g.tap(0, 0, 0, 0, 0), None);
        assert_eq!(g.tap(0, 0, 1, 1, 1), Some(16));
    }

    #[test]
    fn invalid_descriptors_rejected() {
        let r = RingParams::default();
        assert!(ModelDescriptor::new("x", r, vec![1, 6, 6], vec![Layer::AvgPool { q: 3 }]).is_err());
        assert!(ModelDescriptor::new("x", r, vec![1, 6, 6], vec![Layer::AvgPool { q: 4 }]).is_err());
        assert!(ModelDescriptor::new("x", r, vec![4], vec![Layer::Fc { in_dim: 5, out_dim: 2 }]).is_err());
        assert!(ModelDescriptor::new("x", r, vec![1, 4, 4], vec![Layer::conv([1, 5, 5], 1, 3, 1, Padding::Same)]).is_err());
        assert!(ModelDescriptor::new("x", r, vec![1, 2, 2], vec![Layer::conv([1, 2, 2], 1, 5, 1, Padding::Valid)]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let r = RingParams::default();
        assert_eq!(network4(r).hash(), network4(r).hash());
        assert_ne!(network4(r).hash(), network3(r).hash());
        assert_ne!(network4(r).hash(), network4(RingParams::miniature()).hash());
    }
}
