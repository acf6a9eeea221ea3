//! `HMAP` binary grid files.
//!
//! Layout, all integers and reals little-endian:
//!
//! | field      | type            |
//! |------------|-----------------|
//! | magic      | `b"HMAP"`       |
//! | version    | u16             |
//! | n          | u16             |
//! | m          | u32             |
//! | kind       | u8 (0 period, 1 reference, 2 difference) |
//! | period     | i64             |
//! | offset     | i64, -1 if absent |
//! | extent     | n × (lo f64, hi f64) |
//! | values     | m^n × f64, row-major |

use std::fs;
use std::path::Path;

use super::{cell_count, GridKind, HeatmapGrid, Provenance};
use crate::error::{Error, Result};
use crate::ingest::Extent;

pub const MAGIC: &[u8; 4] = b"HMAP";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 1 + 8 + 8;

pub fn encode(grid: &HeatmapGrid) -> Vec<u8> {
    let n = grid.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * n + 8 * grid.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u16).to_le_bytes());
    out.extend_from_slice(&(grid.m as u32).to_le_bytes());
    out.push(grid.kind.code());
    out.extend_from_slice(&grid.provenance.period.to_le_bytes());
    out.extend_from_slice(&grid.provenance.offset.unwrap_or(-1).to_le_bytes());
    for &(lo, hi) in grid.extent.bounds() {
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
    }
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.buf.len() < N {
            return Err(Error::Format("truncated".into()));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("split length"))
    }

    fn u16(&mut self) -> Result<u16> {
        self.take().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn i64(&mut self) -> Result<i64> {
        self.take().map(i64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take().map(f64::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<HeatmapGrid> {
    let mut cur = Cursor { buf: bytes };
    if &cur.take::<4>()? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = cur.u16()? as usize;
    let m = cur.u32()? as usize;
    if n == 0 || m == 0 {
        return Err(Error::Format("zero dimensionality or bin count".into()));
    }
    let [kind_code] = cur.take::<1>()?;
    let kind = GridKind::from_code(kind_code)
        .ok_or_else(|| Error::Format(format!("unknown grid kind {kind_code}")))?;
    let period = cur.i64()?;
    let raw_offset = cur.i64()?;
    let offset = match (kind, raw_offset) {
        (GridKind::Difference, w) if w >= 0 => Some(w),
        (GridKind::Difference, _) => {
            return Err(Error::Format("difference grid without window offset".into()))
        }
        (_, -1) => None,
        (_, w) => return Err(Error::Format(format!("unexpected window offset {w}"))),
    };

    let cells = cell_count(m, n).ok_or_else(|| Error::Format("grid size overflows".into()))?;
    let expected = cells
        .checked_mul(8)
        .and_then(|v| v.checked_add(16 * n))
        .ok_or_else(|| Error::Format("grid size overflows".into()))?;
    if cur.buf.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {expected}",
            cur.buf.len()
        )));
    }

    let mut bounds = Vec::with_capacity(n);
    for _ in 0..n {
        bounds.push((cur.f64()?, cur.f64()?));
    }
    let extent = Extent::new(bounds).map_err(|e| Error::Format(e.to_string()))?;
    let values = cur
        .buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    HeatmapGrid::from_parts(extent, m, values, kind, Provenance { period, offset })
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_grid(path: impl AsRef<Path>, grid: &HeatmapGrid) -> Result<()> {
    fs::write(path, encode(grid))?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<HeatmapGrid> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HeatmapGrid {
        let extent = Extent::new(vec![(-1.5, 2.0), (0.0, 0.125)]).unwrap();
        HeatmapGrid::from_parts(
            extent,
            3,
            (0..9).map(|i| i as f64 * 0.1).collect(),
            GridKind::Difference,
            Provenance {
                period: 1941,
                offset: Some(2),
            },
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"HMAP");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(bytes[12], 2);
        assert_eq!(i64::from_le_bytes(bytes[13..21].try_into().unwrap()), 1941);
        assert_eq!(i64::from_le_bytes(bytes[21..29].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), HEADER_LEN + 32 + 72);
    }

    #[test]
    fn absent_offset_is_minus_one() {
        let grid = HeatmapGrid::zeros(Extent::new(vec![(0.0, 1.0)]).unwrap(), 2, 7).unwrap();
        let bytes = encode(&grid);
        assert_eq!(i64::from_le_bytes(bytes[21..29].try_into().unwrap()), -1);
        assert_eq!(decode(&bytes).unwrap(), grid);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let grid = sample();
        let bytes = encode(&grid);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[12] = 9;
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        let last = bad.len() - 8;
        bad[last..].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(decode(&bad).is_err());
    }
}
