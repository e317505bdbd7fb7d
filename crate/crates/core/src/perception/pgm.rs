//! Binary PGM (P5, 16-bit big-endian) raster dumps.

use std::io::{self, Write};

use crate::raster::Raster;

/// Writes values in `[0, 1]` scaled to `0..=65535`; values outside are clipped.
pub fn write_pgm16(raster: &Raster<f64>, mut out: impl Write) -> io::Result<()> {
    write!(out, "P5\n{} {}\n65535\n", raster.width(), raster.height())?;
    for &v in raster.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.write_all(&q.to_be_bytes())?;
    }
    Ok(())
}

/// Parses a file produced by [`write_pgm16`] back into `[0, 1]` values.
pub fn read_pgm16(bytes: &[u8]) -> Option<Raster<f64>> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let body = bytes.get(pos..)?;
    if body.len() != 2 * w * h {
        return None;
    }
    let data = body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    Some(Raster::from_vec(w, h, data))
}
