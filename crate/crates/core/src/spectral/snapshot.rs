//! Binary field snapshots.
//!
//! Layout (little-endian): magic `NSA3`, `u32` version, `u32` M, `u32`
//! snapshot count, then for each snapshot `M³` nodes in x₁-fastest order with
//! the three components interleaved as `f64`.

use std::io::{Read, Write};

use nalgebra::Vector3;

use super::field::PhysicalField;
use super::grid::GridSpec;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NSA3";
pub const VERSION: u32 = 1;

pub fn write_snapshots<W: Write>(out: &mut W, fields: &[PhysicalField]) -> Result<()> {
    let m = match fields.first() {
        Some(f) => f.grid().modes(),
        None => 0,
    };
    if fields.iter().any(|f| f.grid().modes() != m) {
        return Err(Error::Snapshot("snapshots must share one grid".into()));
    }
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(m as u32).to_le_bytes())?;
    out.write_all(&(fields.len() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(m * m * m * 24);
    for f in fields {
        buf.clear();
        for v in f.samples() {
            for c in 0..3 {
                buf.extend_from_slice(&v[c].to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

/// Read snapshots written by [`write_snapshots`]. An empty file body gives an
/// empty list; the grid carries the default dealias fraction.
pub fn read_snapshots<R: Read>(input: &mut R) -> Result<Vec<PhysicalField>> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Snapshot("truncated header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let m = word(8) as usize;
    let count = word(12) as usize;
    if count == 0 {
        return Ok(Vec::new());
    }
    let grid = GridSpec::new(m).map_err(|e| Error::Snapshot(e.to_string()))?;
    let mut raw = vec![0u8; grid.len() * 24];
    let mut fields = Vec::with_capacity(count);
    for s in 0..count {
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Snapshot(format!("snapshot {s} is truncated")))?;
        let samples = raw
            .chunks_exact(24)
            .map(|b| {
                let f = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
                Vector3::new(f(0), f(8), f(16))
            })
            .collect();
        fields.push(PhysicalField::from_samples(grid, samples)?);
    }
    Ok(fields)
}
