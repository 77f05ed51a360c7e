//! Training state blob (`optimizer.bin`), all little-endian:
//!
//! ```text
//! magic      8 bytes  "GSDFOPT1"
//! iteration  u64
//! sh_degree  u32
//! count      u32
//! count x {
//!   name_len u16, name (utf-8)
//!   t        u64      Adam step count, 0 for plain arrays
//!   len      u64, then len x f64
//! }
//! ```
//!
//! Adam groups are stored as `<group>.m` and `<group>.v`. Exact (f64) Gaussian
//! parameters are stored as `param.<name>` so a resumed run continues bit for
//! bit; `gaussians.ply` holds the float32 interchange copy. Densification
//! statistics are stored as `stats.<name>`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GSDFOPT1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateBlob {
    pub iteration: u64,
    pub sh_degree: u32,
    /// name -> (t, values)
    pub arrays: BTreeMap<String, (u64, Vec<f64>)>,
}

impl StateBlob {
    pub fn insert(&mut self, name: impl Into<String>, t: u64, values: Vec<f64>) {
        self.arrays.insert(name.into(), (t, values));
    }

    pub fn take(&mut self, name: &str, path: &Path) -> Result<(u64, Vec<f64>)> {
        self.arrays.remove(name).ok_or_else(|| Error::parse(path, format!("missing array `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.iteration.to_le_bytes());
        b.extend_from_slice(&self.sh_degree.to_le_bytes());
        b.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, (t, v)) in &self.arrays {
            b.extend_from_slice(&(name.len() as u16).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&t.to_le_bytes());
            b.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(data: &[u8], path: &Path) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > data.len() {
                return Err(Error::parse(path, format!("truncated at byte {pos}")));
            }
            pos += n;
            Ok(&data[pos - n..pos])
        };
        if take(8)? != MAGIC {
            return Err(Error::parse(path, "not a training state file"));
        }
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let iteration = u64_at(take(8)?);
        let sh_degree = u32_at(take(4)?);
        let count = u32_at(take(4)?);
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(len)?)
                .map_err(|_| Error::parse(path, "array name is not utf-8"))?
                .to_string();
            let t = u64_at(take(8)?);
            let n = u64_at(take(8)?) as usize;
            let bytes = take(n.checked_mul(8).ok_or_else(|| Error::parse(path, "array length overflow"))?)?;
            let v = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.insert(name, (t, v));
        }
        if pos != data.len() {
            return Err(Error::parse(path, "trailing bytes"));
        }
        Ok(Self { iteration, sh_degree, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut s = StateBlob { iteration: 42, sh_degree: 1, ..Default::default() };
        s.insert("adam.positions.m", 7, vec![1.0, -2.5, f64::MIN_POSITIVE]);
        s.insert("stats.count", 0, vec![]);
        let b = s.to_bytes();
        let p = Path::new("optimizer.bin");
        assert_eq!(StateBlob::from_bytes(&b, p).unwrap(), s);
        assert!(StateBlob::from_bytes(&b[..b.len() - 3], p).is_err());
        assert!(StateBlob::from_bytes(b"GSDFFLD1", p).is_err());
    }
}
