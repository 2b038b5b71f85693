//! Real-valued models (OIMD files) and their per-server share bundles
//! (OIMS files).
//!
//! OIMD layout: `"OIMD" | version u16 | t u8 | f u8 | json_len u32 |
//! descriptor JSON | per weighted layer: count u64, count f64 LE`.
//! OIMS layout: `"OIMS" | version u16 | role u8 | json_len u32 |
//! descriptor JSON | tensor count u32 | OISH records`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, RngCore};

use super::model::ModelDescriptor;
use crate::error::{Error, Result};
use crate::ring::{RingParams, Role};
use crate::sharing::{read_share, share_tensor, write_share, RingTensor, SharedTensor};

pub const MODEL_MAGIC: &[u8; 4] = b"OIMD";
pub const BUNDLE_MAGIC: &[u8; 4] = b"OIMS";
const VERSION: u16 = 1;

/// A plaintext model as produced by training: the descriptor plus one
/// real-valued tensor per conv/FC layer, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub desc: ModelDescriptor,
    pub weights: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(desc: ModelDescriptor, weights: Vec<Vec<f64>>) -> Result<Self> {
        let m = Model { desc, weights };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(desc: ModelDescriptor) -> Self {
        let weights = desc
            .weight_shapes()
            .iter()
            .map(|s| vec![0.0; s.iter().product()])
            .collect();
        Model { desc, weights }
    }

    /// Uniform weights in `±scale / sqrt(fan_in)`.
    pub fn random<R: RngCore + ?Sized>(desc: ModelDescriptor, scale: f64, rng: &mut R) -> Self {
        let weights = desc
            .weight_shapes()
            .iter()
            .map(|s| {
                let fan_in: usize = s[1..].iter().product();
                let bound = scale / (fan_in as f64).sqrt();
                (0..s.iter().product::<usize>())
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect()
            })
            .collect();
        Model { desc, weights }
    }

    pub fn validate(&self) -> Result<()> {
        self.desc.validate()?;
        let shapes = self.desc.weight_shapes();
        if shapes.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "model has {} weight tensors, descriptor needs {}",
                self.weights.len(),
                shapes.len()
            )));
        }
        for (i, (s, w)) in shapes.iter().zip(&self.weights).enumerate() {
            let n: usize = s.iter().product();
            if w.len() != n {
                return Err(Error::Shape(format!(
                    "weight tensor {i} has {} values, shape {s:?} needs {n}",
                    w.len()
                )));
            }
            if let Some(bad) = w.iter().find(|x| !x.is_finite() || x.abs() >= self.desc.ring.max_real()) {
                return Err(Error::Range(format!("weight tensor {i} holds unencodable value {bad}")));
            }
        }
        Ok(())
    }

    /// Fixed-point encoding of every weight tensor.
    pub fn encode(&self) -> Result<Vec<RingTensor>> {
        self.desc
            .weight_shapes()
            .into_iter()
            .zip(&self.weights)
            .map(|(s, w)| RingTensor::encode(&self.desc.ring, s, w))
            .collect()
    }

    /// Splits the encoded model into the two server bundles.
    pub fn split<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<(ModelShare, ModelShare)> {
        self.validate()?;
        let (w1, w2) = self
            .encode()?
            .iter()
            .map(|t| share_tensor(&self.desc.ring, t, rng))
            .unzip();
        Ok((
            ModelShare {
                role: Role::Server1,
                desc: self.desc.clone(),
                weights: w1,
            },
            ModelShare {
                role: Role::Server2,
                desc: self.desc.clone(),
                weights: w2,
            },
        ))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let json = serde_json::to_vec(&self.desc).map_err(|e| Error::format("model file", e.to_string()))?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.desc.ring.t as u8, self.desc.ring.f as u8])?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for t in &self.weights {
            w.write_all(&(t.len() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(8 * t.len());
            for x in t {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != MODEL_MAGIC {
            return Err(Error::format("model file", "bad magic"));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(Error::format("model file", format!("unsupported version {version}")));
        }
        let ring = RingParams::new(head[6] as u32, head[7] as u32)?;
        let desc = read_descriptor(r, u32::from_le_bytes(head[8..12].try_into().unwrap()))?;
        if desc.ring != ring {
            return Err(Error::format("model file", "header ring differs from descriptor ring"));
        }
        desc.validate()?;
        let mut weights = Vec::new();
        for s in desc.weight_shapes() {
            let mut n = [0u8; 8];
            r.read_exact(&mut n)?;
            let n = u64::from_le_bytes(n) as usize;
            if n != s.iter().product::<usize>() {
                return Err(Error::format("model file", format!("tensor of {n} values for shape {s:?}")));
            }
            let mut buf = vec![0u8; 8 * n];
            r.read_exact(&mut buf)?;
            weights.push(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
        }
        expect_eof(r, "model file")?;
        Model::new(desc, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_descriptor<R: Read>(r: &mut R, len: u32) -> Result<ModelDescriptor> {
    if len > 1 << 20 {
        return Err(Error::format("model descriptor", format!("{len}-byte descriptor")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| Error::format("model descriptor", e.to_string()))
}

fn expect_eof<R: Read>(r: &mut R, what: &'static str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::format(what, "trailing bytes")),
    }
}

/// One server's share of a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelShare {
    pub role: Role,
    pub desc: ModelDescriptor,
    pub weights: Vec<SharedTensor>,
}

impl ModelShare {
    pub fn validate(&self) -> Result<()> {
        self.desc.validate()?;
        let shapes = self.desc.weight_shapes();
        if shapes.len() != self.weights.len() {
            return Err(Error::Shape("share bundle tensor count".into()));
        }
        for (s, w) in shapes.iter().zip(&self.weights) {
            if &w.shape != s || w.role() != self.role || w.params != self.desc.ring {
                return Err(Error::Shape(format!("share bundle tensor {:?} vs {s:?}", w.shape)));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let json = serde_json::to_vec(&self.desc).map_err(|e| Error::format("share bundle", e.to_string()))?;
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.role.index()])?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&(self.weights.len() as u32).to_le_bytes())?;
        for t in &self.weights {
            write_share(w, t)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 11];
        r.read_exact(&mut head)?;
        if &head[..4] != BUNDLE_MAGIC {
            return Err(Error::format("share bundle", "bad magic"));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(Error::format("share bundle", format!("unsupported version {version}")));
        }
        let role = Role::from_index(head[6])?;
        let desc = read_descriptor(r, u32::from_le_bytes(head[7..11].try_into().unwrap()))?;
        let mut n = [0u8; 4];
        r.read_exact(&mut n)?;
        let weights = (0..u32::from_le_bytes(n))
            .map(|_| read_share(r))
            .collect::<Result<Vec<_>>>()?;
        expect_eof(r, "share bundle")?;
        let s = ModelShare { role, desc, weights };
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelShare::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::network4;
    use crate::rng::Seed;
    use crate::sharing::reconstruct_tensor;

    #[test]
    fn model_file_round_trip() {
        let mut rng = Seed::from_u64(5).rng();
        let m = Model::random(network4(RingParams::default()), 1.0, &mut rng);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(Model::read_from(&mut &buf[..]).unwrap(), m);
        let mut bad = buf.clone();
        bad.push(0);
        assert!(Model::read_from(&mut &bad[..]).is_err());
        assert!(Model::read_from(&mut &buf[..buf.len() - 3]).is_err());
        bad = buf.clone();
        bad[0] = b'X';
        assert!(Model::read_from(&mut &bad[..]).is_err());
    }

    #[test]
    fn split_reconstructs_encoding() {
        let mut rng = Seed::from_u64(6).rng();
        let m = Model::random(network4(RingParams::default()), 1.0, &mut rng);
        let (s1, s2) = m.split(&mut rng).unwrap();
        let enc = m.encode().unwrap();
        for ((a, b), e) in s1.weights.iter().zip(&s2.weights).zip(&enc) {
            assert_eq!(&reconstruct_tensor(a, b).unwrap(), e);
        }
        let mut buf = Vec::new();
        s1.write_to(&mut buf).unwrap();
        assert_eq!(ModelShare::read_from(&mut &buf[..]).unwrap(), s1);
    }

    #[test]
    fn zero_model_splits_to_zero_sum() {
        let mut rng = Seed::from_u64(7).rng();
        let m = Model::zeros(network4(RingParams::miniature()));
        let (s1, s2) = m.split(&mut rng).unwrap();
        for (a, b) in s1.weights.iter().zip(&s2.weights) {
            assert!(reconstruct_tensor(a, b).unwrap().data.iter().all(|v| v.0 == 0));
        }
    }

    #[test]
    fn wrong_weight_count_rejected() {
        let d = network4(RingParams::default());
        assert!(Model::new(d.clone(), vec![]).is_err());
        let mut m = Model::zeros(d);
        m.weights[0].pop();
        assert!(m.validate().is_err());
    }
}
