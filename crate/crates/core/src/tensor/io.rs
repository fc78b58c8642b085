//! Tensor serialization: a text line `shape=d0,d1,...\n` followed by the
//! elements as little-endian `f32`.

use std::io::{BufRead, Write};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn write_tensor<T: Scalar, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    writeln!(out, "shape={}", dims.join(","))?;
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads one tensor. `offset` is the byte position of the header in the
/// enclosing stream and is used for error messages; it is advanced past the
/// tensor on success.
pub fn read_tensor<T: Scalar, R: BufRead>(input: &mut R, offset: &mut u64) -> Result<Tensor<T>> {
    let mut line = Vec::new();
    let n = input.read_until(b'\n', &mut line)?;
    if n == 0 || line.last() != Some(&b'\n') {
        return Err(Error::format(*offset, "truncated tensor header"));
    }
    let text = std::str::from_utf8(&line[..n - 1]).map_err(|_| Error::format(*offset, "tensor header is not utf-8"))?;
    let dims = text
        .strip_prefix("shape=")
        .ok_or_else(|| Error::format(*offset, format!("expected `shape=`, got {text:?}")))?;
    let shape: Vec<usize> = dims
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(*offset, format!("bad shape {dims:?}: {e}")))?;
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::format(*offset, format!("invalid shape {shape:?}")));
    }
    *offset += n as u64;
    let count: usize = shape.iter().product();
    let mut raw = vec![0u8; count * 4];
    let mut filled = 0;
    while filled < raw.len() {
        let got = input.read(&mut raw[filled..])?;
        if got == 0 {
            return Err(Error::format(
                *offset + filled as u64,
                format!("truncated tensor data: expected {} bytes, got {filled}", raw.len()),
            ));
        }
        filled += got;
    }
    *offset += raw.len() as u64;
    let data = raw
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::from_vec(&shape, data)
}
