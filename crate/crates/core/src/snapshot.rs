//! Binary container for space-time fields on the periodic grid.
//!
//! Layout (little endian): the 8-byte magic `GTBMSNAP`, then `u32` version,
//! kind, grid size, number of times and number of fields, the `f64` time list,
//! and finally each field as `n_times × grid_n × grid_n` row-major `f64`s.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GTBMSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    /// Conformal factor `u` and scalar curvature `R` of a flow.
    Flow,
    /// A density together with its volume weights.
    Density,
}

impl SnapshotKind {
    fn code(self) -> u32 {
        match self {
            SnapshotKind::Flow => 0,
            SnapshotKind::Density => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(SnapshotKind::Flow),
            1 => Ok(SnapshotKind::Density),
            other => Err(Error::Snapshot(format!("unknown snapshot kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    pub grid_n: usize,
    pub times: Vec<f64>,
    /// Each entry holds one field for all times, `times.len() * grid_n²` values.
    pub fields: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn validate(&self) -> Result<()> {
        let block = self.times.len() * self.grid_n * self.grid_n;
        if self.times.is_empty() {
            return Err(Error::Snapshot("snapshot has no times".into()));
        }
        for (k, f) in self.fields.iter().enumerate() {
            if f.len() != block {
                return Err(Error::Snapshot(format!("field {k} has {} values, expected {block}", f.len())));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        self.validate()?;
        w.write_all(MAGIC)?;
        for v in [
            SNAPSHOT_VERSION,
            self.kind.code(),
            self.grid_n as u32,
            self.times.len() as u32,
            self.fields.len() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for field in &self.fields {
            let mut buf = Vec::with_capacity(field.len() * 8);
            for v in field {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Snapshot("not a snapshot file (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
        }
        let kind = SnapshotKind::from_code(cur.u32()?)?;
        let grid_n = cur.u32()? as usize;
        let n_times = cur.u32()? as usize;
        let n_fields = cur.u32()? as usize;
        let block = n_times
            .checked_mul(grid_n)
            .and_then(|v| v.checked_mul(grid_n))
            .ok_or_else(|| Error::Snapshot("header shape overflows".into()))?;
        let needed = 8usize
            .checked_mul(n_times + block.checked_mul(n_fields).ok_or_else(|| Error::Snapshot("header shape overflows".into()))?)
            .ok_or_else(|| Error::Snapshot("header shape overflows".into()))?;
        if cur.remaining() != needed {
            return Err(Error::Snapshot(format!(
                "payload has {} bytes, header ({n_times} times, {n_fields} fields of {grid_n}²) requires {needed}",
                cur.remaining()
            )));
        }
        let times = cur.f64s(n_times)?;
        let fields = (0..n_fields).map(|_| cur.f64s(block)).collect::<Result<Vec<_>>>()?;
        let snap = Snapshot { kind, grid_n, times, fields };
        snap.validate()?;
        Ok(snap)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.remaining() < k {
            return Err(Error::Snapshot(format!("truncated snapshot at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, k: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * k)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Snapshot {
        Snapshot {
            kind: SnapshotKind::Density,
            grid_n: 2,
            times: vec![0.0, 0.5],
            fields: vec![(0..8).map(|v| v as f64 * 0.1).collect(), vec![1.0; 8]],
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(Snapshot::from_bytes(&buf).unwrap(), s);
    }

    #[test]
    fn structured_errors_on_bad_input() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        for cut in [0, 5, 12, 40, buf.len() - 1] {
            assert!(matches!(Snapshot::from_bytes(&buf[..cut]), Err(Error::Snapshot(_))));
        }
        let mut wrong_version = buf.clone();
        wrong_version[8] = 9;
        assert!(matches!(Snapshot::from_bytes(&wrong_version), Err(Error::Snapshot(m)) if m.contains("version")));
        let mut bad_shape = buf;
        bad_shape[16] = 3;
        assert!(matches!(Snapshot::from_bytes(&bad_shape), Err(Error::Snapshot(_))));
    }
}
