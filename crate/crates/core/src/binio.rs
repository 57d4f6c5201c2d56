//! Little-endian helpers for the binary artifact formats.

use std::io::{self, Read, Write};

pub(crate) fn write_u32<W: Write>(out: &mut W, v: u32) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f32s<W: Write>(out: &mut W, values: &[f64]) -> io::Result<()> {
    for &v in values {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> io::Result<()> {
    for &v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn write_str<W: Write>(out: &mut W, s: &str) -> io::Result<()> {
    write_u32(out, s.len() as u32)?;
    out.write_all(s.as_bytes())
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32_vec<R: Read>(input: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub(crate) fn read_f64_vec<R: Read>(input: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 8];
    input.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn read_str<R: Read>(input: &mut R) -> io::Result<String> {
    let n = read_u32(input)? as usize;
    if n > 1 << 20 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "string too long"));
    }
    let mut raw = vec![0u8; n];
    input.read_exact(&mut raw)?;
    String::from_utf8(raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub(crate) fn expect_magic<R: Read>(input: &mut R, magic: &[u8; 8]) -> io::Result<()> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    if &b != magic {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic"));
    }
    Ok(())
}

/// Round a value through f32, matching what the binary formats persist.
pub(crate) fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}
