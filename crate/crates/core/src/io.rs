//! Field snapshot files: one JSON header line `{N, M, T, t}` followed by the
//! little-endian `f64` samples of the real component, then the imaginary one.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, RealPairField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub period: f64,
    pub t: f64,
}

pub fn write_field<W: Write>(mut out: W, field: &RealPairField, time: f64) -> Result<()> {
    let header = SnapshotHeader {
        n: field.grid.num_points(),
        m: field.grid.num_cells(),
        period: field.grid.cell_period(),
        t: time,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(16 * header.n);
    for v in field.re.iter().chain(&field.im) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(input: R) -> Result<(RealPairField, f64)> {
    let mut reader = BufReader::new(input);
    next_field(&mut reader)?.ok_or_else(|| Error::Format("empty snapshot file".into()))
}

/// Read the next record of a concatenated field stream; `None` at end of input.
pub fn next_field<R: BufRead>(reader: &mut R) -> Result<Option<(RealPairField, f64)>> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())?;
    let grid = PeriodicGrid::new(header.n, header.period, header.m)?;
    let mut bytes = vec![0u8; 16 * header.n];
    reader.read_exact(&mut bytes).map_err(|e| Error::Format(format!("truncated snapshot body: {e}")))?;
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let field = RealPairField::from_parts(grid, vals[..header.n].to_vec(), vals[header.n..].to_vec())?;
    Ok(Some((field, header.t)))
}

/// Write several `(t, field)` records to one file.
pub fn save_fields<'a>(path: &Path, fields: impl IntoIterator<Item = (f64, &'a RealPairField)>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (t, f) in fields {
        write_field(&mut w, f, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_fields(path: &Path) -> Result<Vec<(f64, RealPairField)>> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    while let Some((f, t)) = next_field(&mut reader)? {
        out.push((t, f));
    }
    Ok(out)
}

pub fn save_field(path: &Path, field: &RealPairField, time: f64) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_field(&mut w, field, time)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<(RealPairField, f64)> {
    read_field(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_roundtrip_is_bitwise() {
        let g = PeriodicGrid::new(16, 1.5, 2).unwrap();
        let f = RealPairField::from_fn(g, |x| (x.sin() / 3.0, x.exp()));
        let mut buf = Vec::new();
        write_field(&mut buf, &f, 2.25).unwrap();
        let first = buf.iter().position(|b| *b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..first]).unwrap();
        assert_eq!(header["N"], 16);
        assert_eq!(header["M"], 2);
        let (g2, t) = read_field(buf.as_slice()).unwrap();
        assert_eq!(t, 2.25);
        assert_eq!(g2, f);
    }

    #[test]
    fn streams_hold_several_records() {
        let g = PeriodicGrid::new(8, 1.0, 1).unwrap();
        let a = RealPairField::from_fn(g, |x| (x, 1.0));
        let b = a.scale(-2.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        save_fields(&p, [(0.0, &a), (0.5, &b)]).unwrap();
        let back = load_fields(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].0, 0.5);
        assert_eq!(back[1].1, b);
    }
}
