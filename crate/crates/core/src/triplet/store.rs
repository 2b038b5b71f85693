//! Role-local triplet storage and the `OITR` file format.
//!
//! Layout: `"OITR" | version u16 | role u8 | t u8 | f u8 | count u64`, all
//! little-endian, then `count` records of `(a, b, z)` limbs of `ceil(t/8)`
//! bytes each. Consumed index ranges are kept in a JSON ledger beside the
//! store (`<path>.ledger`) so a triplet is never handed out twice, across
//! restarts included.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PackedTripletBatch;
use crate::error::{Error, Result};
use crate::ring::{RingParams, RingValue, Role};

pub const STORE_MAGIC: &[u8; 4] = b"OITR";
const STORE_VERSION: u16 = 1;
const HEADER_LEN: u64 = 17;
const COUNT_OFFSET: u64 = 9;

/// Triplets handed out for one multiplication batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletSlice {
    pub start: usize,
    pub a: Vec<RingValue>,
    pub b: Vec<RingValue>,
    pub z: Vec<RingValue>,
}

impl TripletSlice {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Splits off the first `n` triplets.
    pub fn take_front(&mut self, n: usize) -> Result<TripletSlice> {
        if n > self.len() {
            return Err(Error::TripletExhausted {
                needed: n,
                available: self.len(),
            });
        }
        let head = TripletSlice {
            start: self.start,
            a: self.a.drain(..n).collect(),
            b: self.b.drain(..n).collect(),
            z: self.z.drain(..n).collect(),
        };
        self.start += n;
        Ok(head)
    }
}

impl From<PackedTripletBatch> for TripletSlice {
    fn from(b: PackedTripletBatch) -> Self {
        TripletSlice {
            start: 0,
            a: b.a,
            b: b.b,
            z: b.z,
        }
    }
}

#[derive(Default, Serialize, Deserialize)]
struct LedgerFile {
    consumed: Vec<(usize, usize)>,
}

pub struct TripletStore {
    role: Role,
    ring: RingParams,
    a: Vec<RingValue>,
    b: Vec<RingValue>,
    z: Vec<RingValue>,
    /// start -> end of consumed ranges; kept disjoint.
    consumed: BTreeMap<usize, usize>,
    ledger_path: Option<PathBuf>,
}

pub fn ledger_path(store: &Path) -> PathBuf {
    let mut s = store.as_os_str().to_owned();
    s.push(".ledger");
    PathBuf::from(s)
}

impl TripletStore {
    pub fn new(role: Role, ring: RingParams) -> Self {
        TripletStore {
            role,
            ring,
            a: Vec::new(),
            b: Vec::new(),
            z: Vec::new(),
            consumed: BTreeMap::new(),
            ledger_path: None,
        }
    }

    pub fn from_batches(role: Role, ring: RingParams, batches: &[PackedTripletBatch]) -> Result<Self> {
        let mut s = TripletStore::new(role, ring);
        for b in batches {
            s.push_batch(b)?;
        }
        Ok(s)
    }

    pub fn push_batch(&mut self, batch: &PackedTripletBatch) -> Result<()> {
        if batch.role != self.role {
            return Err(Error::Protocol(format!(
                "{} batch pushed into {} store",
                batch.role, self.role
            )));
        }
        self.a.extend_from_slice(&batch.a);
        self.b.extend_from_slice(&batch.b);
        self.z.extend_from_slice(&batch.z);
        Ok(())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn ring(&self) -> RingParams {
        self.ring
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn consumed_count(&self) -> usize {
        self.consumed.iter().map(|(s, e)| e - s).sum()
    }

    pub fn consumed_ranges(&self) -> Vec<(usize, usize)> {
        self.consumed.iter().map(|(&s, &e)| (s, e)).collect()
    }

    /// First index past every consumed range.
    pub fn high_water(&self) -> usize {
        self.consumed.values().copied().max().unwrap_or(0)
    }

    fn overlaps(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        if let Some((&s, &e)) = self.consumed.range(..end).next_back() {
            if e > start {
                return Some((s, e));
            }
        }
        None
    }

    /// Copies triplets out without consuming them (audits only).
    pub fn view(&self, start: usize, len: usize) -> Result<TripletSlice> {
        let end = start.checked_add(len).filter(|&e| e <= self.len()).ok_or(
            Error::TripletExhausted {
                needed: len,
                available: self.len().saturating_sub(start),
            },
        )?;
        Ok(TripletSlice {
            start,
            a: self.a[start..end].to_vec(),
            b: self.b[start..end].to_vec(),
            z: self.z[start..end].to_vec(),
        })
    }

    /// Marks `[start, start+len)` consumed and returns it. Any overlap with
    /// an earlier claim is refused.
    pub fn claim(&mut self, start: usize, len: usize) -> Result<TripletSlice> {
        let slice = self.view(start, len)?;
        if len == 0 {
            return Ok(slice);
        }
        let end = start + len;
        if let Some((s, e)) = self.overlaps(start, end) {
            return Err(Error::TripletReuse { start: s, end: e });
        }
        self.consumed.insert(start, end);
        self.persist_ledger()?;
        Ok(slice)
    }

    /// Claims the next `len` triplets after everything consumed so far.
    pub fn claim_next(&mut self, len: usize) -> Result<TripletSlice> {
        self.claim(self.high_water(), len)
    }

    fn persist_ledger(&self) -> Result<()> {
        let Some(path) = &self.ledger_path else {
            return Ok(());
        };
        let body = serde_json::to_vec(&LedgerFile {
            consumed: self.consumed_ranges(),
        })
        .map_err(|e| Error::format("ledger", e.to_string()))?;
        let tmp = path.with_extension("ledger.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut w = StoreWriter::create(path, self.role, self.ring)?;
        w.append_slices(&self.a, &self.b, &self.z)?;
        Ok(())
    }

    /// Loads a store and its ledger (if present); subsequent claims are
    /// persisted to the ledger.
    pub fn open(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let (role, ring, count) = read_header(&mut r)?;
        let recs = crate::sharing::read_limbs(&mut r, &ring, count as usize * 3)
            .map_err(|e| match e {
                Error::Io(_) => Error::format("triplet store", "truncated body"),
                other => other,
            })?;
        let mut s = TripletStore::new(role, ring);
        for c in recs.chunks_exact(3) {
            s.a.push(c[0]);
            s.b.push(c[1]);
            s.z.push(c[2]);
        }
        let lp = ledger_path(path);
        if lp.exists() {
            let led: LedgerFile = serde_json::from_slice(&std::fs::read(&lp)?)
                .map_err(|e| Error::format("ledger", e.to_string()))?;
            for (st, en) in led.consumed {
                if st >= en || en > s.len() || s.overlaps(st, en).is_some() {
                    return Err(Error::format("ledger", format!("bad range {st}..{en}")));
                }
                s.consumed.insert(st, en);
            }
        }
        s.ledger_path = Some(lp);
        Ok(s)
    }
}

fn read_header<R: Read>(r: &mut R) -> Result<(Role, RingParams, u64)> {
    let mut h = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut h)
        .map_err(|_| Error::format("triplet store", "short header"))?;
    if &h[..4] != STORE_MAGIC {
        return Err(Error::format("triplet store", "bad magic"));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != STORE_VERSION {
        return Err(Error::format("triplet store", format!("version {version}")));
    }
    let role = Role::from_index(h[6])?;
    let ring = RingParams::new(h[7] as u32, h[8] as u32)?;
    let count = u64::from_le_bytes(h[9..17].try_into().unwrap());
    Ok((role, ring, count))
}

/// Appends batches to a store file, committing the record count after each
/// batch so an interrupted run leaves a consistent prefix.
pub struct StoreWriter {
    file: BufWriter<File>,
    ring: RingParams,
    role: Role,
    count: u64,
}

impl StoreWriter {
    pub fn create(path: &Path, role: Role, ring: RingParams) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        file.write_all(STORE_MAGIC)?;
        file.write_all(&STORE_VERSION.to_le_bytes())?;
        file.write_all(&[role.index(), ring.t as u8, ring.f as u8])?;
        file.write_all(&0u64.to_le_bytes())?;
        file.flush()?;
        Ok(StoreWriter {
            file,
            ring,
            role,
            count: 0,
        })
    }

    /// Reopens an existing file, dropping any partially written tail.
    pub fn resume(path: &Path, role: Role, ring: RingParams) -> Result<Self> {
        let mut f = OpenOptions::new().read(true).write(true).open(path)?;
        let (frole, fring, count) = read_header(&mut f)?;
        if frole != role || fring != ring {
            return Err(Error::format(
                "triplet store",
                format!("existing store is {frole} t={} f={}", fring.t, fring.f),
            ));
        }
        let rec = 3 * ring.limb_bytes() as u64;
        let have = (f.metadata()?.len().saturating_sub(HEADER_LEN)) / rec;
        let count = count.min(have);
        let mut w = StoreWriter {
            file: BufWriter::new(f),
            ring,
            role,
            count,
        };
        w.truncate_to(count)?;
        Ok(w)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn truncate_to(&mut self, count: u64) -> Result<()> {
        if count > self.count {
            return Err(Error::Params(format!(
                "cannot extend store from {} to {count} by truncation",
                self.count
            )));
        }
        self.file.flush()?;
        let rec = 3 * self.ring.limb_bytes() as u64;
        let f = self.file.get_mut();
        f.set_len(HEADER_LEN + count * rec)?;
        self.count = count;
        self.commit_count()?;
        self.file.seek(SeekFrom::End(0))?;
        Ok(())
    }

    fn commit_count(&mut self) -> Result<()> {
        self.file.flush()?;
        let f = self.file.get_mut();
        f.seek(SeekFrom::Start(COUNT_OFFSET))?;
        f.write_all(&self.count.to_le_bytes())?;
        f.sync_data()?;
        f.seek(SeekFrom::End(0))?;
        Ok(())
    }

    pub fn append(&mut self, batch: &PackedTripletBatch) -> Result<()> {
        if batch.role != self.role {
            return Err(Error::Protocol("batch role does not match store".into()));
        }
        self.append_slices(&batch.a, &batch.b, &batch.z)
    }

    fn append_slices(&mut self, a: &[RingValue], b: &[RingValue], z: &[RingValue]) -> Result<()> {
        let nb = self.ring.limb_bytes();
        let mut buf = Vec::with_capacity(a.len() * 3 * nb);
        for i in 0..a.len() {
            for v in [a[i], b[i], z[i]] {
                buf.extend_from_slice(&v.0.to_le_bytes()[..nb]);
            }
        }
        self.file.write_all(&buf)?;
        self.count += a.len() as u64;
        self.commit_count()
    }
}
