//! Field checkpoint blob, all little-endian:
//!
//! ```text
//! magic     8 bytes  "GSDFFLD1"
//! levels    u32      features_per_level u32   base_resolution u32
//! growth    f64      log2_table_size    u32   init_range      f64
//! hidden    u32      input              u32
//! bounds    6 x f64  (min xyz, max xyz)
//! log_beta  f64      log_s              f64
//! features  u64 count, then count x f64
//! mlp       u64 count, then count x f64  ([W1 | b1 | w2 | b2])
//! ```

use std::path::Path;

use nalgebra::Vector3;

use super::{GridConfig, HashGrid, Mlp, SdfField};
use crate::error::{Error, Result};
use crate::scene::Aabb;

const MAGIC: &[u8; 8] = b"GSDFFLD1";

pub fn field_to_bytes(field: &SdfField) -> Vec<u8> {
    let c = &field.grid.config;
    let mut b = Vec::with_capacity(128 + 8 * (field.grid.features.len() + field.mlp.params.len()));
    b.extend_from_slice(MAGIC);
    for v in [c.levels as u32, c.features_per_level as u32, c.base_resolution as u32] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&c.growth.to_le_bytes());
    b.extend_from_slice(&c.log2_table_size.to_le_bytes());
    b.extend_from_slice(&c.init_range.to_le_bytes());
    b.extend_from_slice(&(field.mlp.hidden as u32).to_le_bytes());
    b.extend_from_slice(&(field.mlp.input as u32).to_le_bytes());
    let bd = field.bounds();
    for v in bd.min.iter().chain(bd.max.iter()).chain([field.log_beta, field.log_s].iter()) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for arr in [&field.grid.features, &field.mlp.params] {
        b.extend_from_slice(&(arr.len() as u64).to_le_bytes());
        for v in arr.iter() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::parse(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let n = self.u64()? as usize;
        if n != expected {
            return Err(Error::parse(self.path, format!("{what} count {n} at byte {at}, expected {expected}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn field_from_bytes(data: &[u8], path: &Path) -> Result<SdfField> {
    let mut r = Reader { data, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::parse(path, "not a field checkpoint (bad magic)"));
    }
    let levels = r.u32()? as usize;
    let features_per_level = r.u32()? as usize;
    let base_resolution = r.u32()? as usize;
    let growth = r.f64()?;
    let log2_table_size = r.u32()?;
    let init_range = r.f64()?;
    let config = GridConfig { levels, features_per_level, base_resolution, growth, log2_table_size, init_range };
    let hidden = r.u32()? as usize;
    let input = r.u32()? as usize;
    let mut v = [0.0; 8];
    for x in &mut v {
        *x = r.f64()?;
    }
    let bounds = Aabb::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]));
    let mut grid = HashGrid::zeroed(config, bounds).map_err(|e| Error::parse(path, e.to_string()))?;
    if input != grid.encoding_dim() + 3 {
        return Err(Error::parse(path, format!("mlp input {input} does not match the grid encoding")));
    }
    let mut mlp = Mlp::zeros(input, hidden).map_err(|e| Error::parse(path, e.to_string()))?;
    grid.features = r.array(grid.features.len(), "feature")?;
    mlp.params = r.array(mlp.params.len(), "mlp parameter")?;
    if r.pos != data.len() {
        return Err(Error::parse(path, format!("{} trailing bytes", data.len() - r.pos)));
    }
    Ok(SdfField { grid, mlp, log_beta: v[6], log_s: v[7] })
}

pub fn write_field(path: &Path, field: &SdfField) -> Result<()> {
    crate::fsutil::write_atomic(path, &field_to_bytes(field))
}

pub fn read_field(path: &Path) -> Result<SdfField> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    field_from_bytes(&data, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf_field::FieldConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_corruption() {
        let cfg = FieldConfig {
            grid: GridConfig { levels: 3, base_resolution: 4, log2_table_size: 8, ..Default::default() },
            hidden: 8,
            ..Default::default()
        };
        let f = SdfField::new(&cfg, Aabb::cube(1.2), 0.4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let bytes = field_to_bytes(&f);
        let p = Path::new("mem");
        assert_eq!(field_from_bytes(&bytes, p).unwrap(), f);
        assert!(field_from_bytes(&bytes[..bytes.len() - 3], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(field_from_bytes(&bad, p).is_err());
    }
}
