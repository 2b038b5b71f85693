//! (2,2) additive secret sharing of ring values and tensors, and the
//! `OISH` share-file format.

use std::cell::Cell;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::ring::{RingParams, RingValue, Role};

/// A plaintext tensor over the ring (row-major, CHW for images).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingTensor {
    pub shape: Vec<usize>,
    pub data: Vec<RingValue>,
}

impl RingTensor {
    pub fn new(shape: Vec<usize>, data: Vec<RingValue>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(RingTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        RingTensor {
            shape,
            data: vec![RingValue::ZERO; n],
        }
    }

    pub fn encode(params: &RingParams, shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&x| params.encode_fixed(x))
            .collect::<Result<Vec<_>>>()?;
        RingTensor::new(shape, data)
    }

    pub fn decode(&self, params: &RingParams) -> Vec<f64> {
        self.data.iter().map(|&v| params.decode_fixed(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let want: usize = shape.iter().product();
    if want != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {want} elements, data has {len}"
        )));
    }
    Ok(())
}

/// One server's additive share of a tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedTensor {
    role: Role,
    pub shape: Vec<usize>,
    pub data: Vec<RingValue>,
    pub params: RingParams,
}

impl SharedTensor {
    pub fn new(
        role: Role,
        shape: Vec<usize>,
        data: Vec<RingValue>,
        params: RingParams,
    ) -> Result<Self> {
        check_len(&shape, data.len())?;
        let mask = params.mask();
        if let Some(bad) = data.iter().find(|v| v.0 & !mask != 0) {
            return Err(Error::Range(format!("limb {} exceeds 2^{}", bad.0, params.t)));
        }
        Ok(SharedTensor {
            role,
            shape,
            data,
            params,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same role and params, new contents.
    pub fn with_data(&self, shape: Vec<usize>, data: Vec<RingValue>) -> Result<Self> {
        SharedTensor::new(self.role, shape, data, self.params)
    }

    /// Share of the public constant `c` in every position: server 1 holds
    /// `c`, server 2 holds zero.
    pub fn public(role: Role, params: RingParams, shape: Vec<usize>, c: RingValue) -> Self {
        let n = shape.iter().product();
        let v = if role == Role::Server1 { c } else { RingValue::ZERO };
        SharedTensor {
            role,
            shape,
            data: vec![v; n],
            params,
        }
    }
}

pub fn share<R: RngCore + ?Sized>(
    params: &RingParams,
    v: RingValue,
    rng: &mut R,
) -> (RingValue, RingValue) {
    let s1 = params.reduce(rng.next_u64());
    (s1, params.sub(v, s1))
}

pub fn reconstruct(params: &RingParams, s1: RingValue, s2: RingValue) -> RingValue {
    audit_reconstruct();
    params.add(s1, s2)
}

pub fn share_tensor<R: RngCore + ?Sized>(
    params: &RingParams,
    plain: &RingTensor,
    rng: &mut R,
) -> (SharedTensor, SharedTensor) {
    let (a, b): (Vec<_>, Vec<_>) = plain.data.iter().map(|&v| share(params, v, rng)).unzip();
    (
        SharedTensor {
            role: Role::Server1,
            shape: plain.shape.clone(),
            data: a,
            params: *params,
        },
        SharedTensor {
            role: Role::Server2,
            shape: plain.shape.clone(),
            data: b,
            params: *params,
        },
    )
}

pub fn reconstruct_tensor(a: &SharedTensor, b: &SharedTensor) -> Result<RingTensor> {
    if a.role == b.role {
        return Err(Error::Protocol(format!(
            "cannot reconstruct two {} shares",
            a.role
        )));
    }
    if a.shape != b.shape || a.params != b.params {
        return Err(Error::Shape(format!(
            "share shapes differ: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    audit_reconstruct();
    let p = a.params;
    Ok(RingTensor {
        shape: a.shape.clone(),
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| p.add(x, y))
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Reconstruction audit.
//
// Server code runs inside a `ServerScope`; any reconstruction performed on a
// thread that is inside such a scope is counted against that role.

static RECONSTRUCT_CALLS: [AtomicU64; 2] = [AtomicU64::new(0), AtomicU64::new(0)];

thread_local! {
    static ACTIVE_ROLE: Cell<Option<Role>> = const { Cell::new(None) };
}

fn audit_reconstruct() {
    if let Some(role) = ACTIVE_ROLE.with(|r| r.get()) {
        RECONSTRUCT_CALLS[role.index() as usize - 1].fetch_add(1, Ordering::Relaxed);
    }
}

/// Number of reconstructions observed inside server scopes for `role`.
pub fn reconstruct_calls(role: Role) -> u64 {
    RECONSTRUCT_CALLS[role.index() as usize - 1].load(Ordering::Relaxed)
}

/// Marks the current thread as executing server `role` until dropped.
pub struct ServerScope {
    prev: Option<Role>,
}

impl ServerScope {
    pub fn enter(role: Role) -> Self {
        let prev = ACTIVE_ROLE.with(|r| r.replace(Some(role)));
        ServerScope { prev }
    }
}

impl Drop for ServerScope {
    fn drop(&mut self) {
        ACTIVE_ROLE.with(|r| r.set(self.prev));
    }
}

// ---------------------------------------------------------------------------
// OISH share files.

pub const SHARE_MAGIC: &[u8; 4] = b"OISH";
pub const SHARE_VERSION: u16 = 1;

pub(crate) fn write_limbs<W: Write>(w: &mut W, params: &RingParams, data: &[RingValue]) -> Result<()> {
    let nb = params.limb_bytes();
    let mut buf = Vec::with_capacity(data.len() * nb);
    for v in data {
        buf.extend_from_slice(&v.0.to_le_bytes()[..nb]);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_limbs<R: Read>(
    r: &mut R,
    params: &RingParams,
    count: usize,
) -> Result<Vec<RingValue>> {
    let nb = params.limb_bytes();
    let mut buf = vec![0u8; count * nb];
    r.read_exact(&mut buf)?;
    let mask = params.mask();
    buf.chunks_exact(nb)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..nb].copy_from_slice(c);
            let v = u64::from_le_bytes(b);
            if v & !mask != 0 {
                Err(Error::format("share limb", format!("{v} exceeds 2^{}", params.t)))
            } else {
                Ok(RingValue(v))
            }
        })
        .collect()
}

pub fn write_share<W: Write>(w: &mut W, s: &SharedTensor) -> Result<()> {
    if s.shape.len() > u8::MAX as usize {
        return Err(Error::Shape("rank above 255".into()));
    }
    let mut head = Vec::with_capacity(12 + 4 * s.shape.len());
    head.extend_from_slice(SHARE_MAGIC);
    head.extend_from_slice(&SHARE_VERSION.to_le_bytes());
    head.push(s.role.index());
    head.push(s.params.t as u8);
    head.push(s.params.f as u8);
    head.push(s.shape.len() as u8);
    for &d in &s.shape {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} too large")))?;
        head.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&head)?;
    write_limbs(w, &s.params, &s.data)
}

pub fn read_share<R: Read>(r: &mut R) -> Result<SharedTensor> {
    let mut head = [0u8; 10];
    r.read_exact(&mut head)?;
    if &head[..4] != SHARE_MAGIC {
        return Err(Error::format("share file", "bad magic"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != SHARE_VERSION {
        return Err(Error::format("share file", format!("unsupported version {version}")));
    }
    let role = Role::from_index(head[6])?;
    let params = RingParams::new(head[7] as u32, head[8] as u32)?;
    let rank = head[9] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    let n: usize = shape.iter().product();
    let data = read_limbs(r, &params, n)?;
    SharedTensor::new(role, shape, data, params)
}

pub fn share_to_bytes(s: &SharedTensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_share(&mut out, s).expect("writing to a Vec cannot fail");
    out
}

pub fn share_from_bytes(mut bytes: &[u8]) -> Result<SharedTensor> {
    let s = read_share(&mut bytes)?;
    if !bytes.is_empty() {
        return Err(Error::format("share file", "trailing bytes"));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    /// Replays a fixed draw so hand-computed examples can be checked.
    struct Fixed(u64);
    impl RngCore for Fixed {
        fn next_u32(&mut self) -> u32 {
            self.0 as u32
        }
        fn next_u64(&mut self) -> u64 {
            self.0
        }
        fn fill_bytes(&mut self, _: &mut [u8]) {
            unimplemented!()
        }
        fn try_fill_bytes(&mut self, _: &mut [u8]) -> Result<(), rand::Error> {
            unimplemented!()
        }
    }

    #[test]
    fn share_examples_small_ring() {
        let p = RingParams { t: 3, f: 1 };
        assert_eq!(share(&p, RingValue(5), &mut Fixed(3)), (RingValue(3), RingValue(2)));
        assert_eq!(reconstruct(&p, RingValue(3), RingValue(2)), RingValue(5));
        let (a, b) = share(&p, RingValue(0), &mut Fixed(6));
        assert_eq!((a, b), (RingValue(6), RingValue(2)));
        assert_eq!(reconstruct(&p, a, b), RingValue(0));
    }

    #[test]
    fn round_trip_random_values() {
        let p = RingParams::default();
        let mut rng = Seed::from_u64(7).rng();
        for _ in 0..100_000 {
            let v = RingValue(rng.gen());
            let (a, b) = share(&p, v, &mut rng);
            assert_eq!(reconstruct(&p, a, b), v);
        }
    }

    #[test]
    fn tensor_examples() {
        let p = RingParams::default();
        let mut rng = Seed::from_u64(8).rng();
        let zero = RingTensor::zeros(vec![28, 28]);
        let (a, b) = share_tensor(&p, &zero, &mut rng);
        assert_eq!(reconstruct_tensor(&a, &b).unwrap(), zero);
        assert!(a.data.iter().any(|v| v.0 != 0));

        let ident = RingTensor::encode(&p, vec![2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let (a, b) = share_tensor(&p, &ident, &mut rng);
        assert_eq!(reconstruct_tensor(&a, &b).unwrap(), ident);

        let vals: Vec<f64> = (0..25).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let kernel = RingTensor::encode(&p, vec![5, 5], &vals).unwrap();
        let (a, b) = share_tensor(&p, &kernel, &mut rng);
        assert_eq!(a.role(), Role::Server1);
        assert_eq!(b.role(), Role::Server2);
        assert_eq!(reconstruct_tensor(&a, &b).unwrap(), kernel);
        assert!(reconstruct_tensor(&a, &a).is_err());
    }

    #[test]
    fn shape_checks() {
        let p = RingParams::default();
        assert!(SharedTensor::new(Role::Server1, vec![2, 2], vec![RingValue(0); 3], p).is_err());
        let m = RingParams::miniature();
        assert!(SharedTensor::new(Role::Server1, vec![1], vec![RingValue(1 << 20)], m).is_err());
    }

    #[test]
    fn audit_counts_only_inside_scope() {
        let p = RingParams::default();
        let before = reconstruct_calls(Role::Server2);
        reconstruct(&p, RingValue(1), RingValue(2));
        assert_eq!(reconstruct_calls(Role::Server2), before);
        {
            let _g = ServerScope::enter(Role::Server2);
            reconstruct(&p, RingValue(1), RingValue(2));
        }
        assert_eq!(reconstruct_calls(Role::Server2), before + 1);
    }

    #[test]
    fn share_file_layout() {
        let p = RingParams::miniature();
        let s = SharedTensor::new(
            Role::Server2,
            vec![1, 2],
            vec![RingValue(0x1234), RingValue(0xbeef)],
            p,
        )
        .unwrap();
        let bytes = share_to_bytes(&s);
        assert_eq!(
            bytes,
            [
                b'O', b'I', b'S', b'H', 1, 0, 2, 16, 4, 2, 1, 0, 0, 0, 2, 0, 0, 0, 0x34, 0x12,
                0xef, 0xbe
            ]
        );
        assert_eq!(share_from_bytes(&bytes).unwrap(), s);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(share_from_bytes(&bad).is_err());
        assert!(share_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn share_file_round_trip(
            t in 2u32..=64,
            dims in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let p = RingParams::new(t, 1).unwrap();
            let n: usize = dims.iter().product();
            let mut rng = Seed::from_u64(seed).rng();
            let data = (0..n).map(|_| p.reduce(rng.gen())).collect();
            let s = SharedTensor::new(Role::Server1, dims, data, p).unwrap();
            prop_assert_eq!(share_from_bytes(&share_to_bytes(&s)).unwrap(), s);
        }
    }
}
