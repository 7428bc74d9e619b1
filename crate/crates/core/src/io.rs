//! Dense matrix file format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"STMATF64"
//! 8       8     rows, u64 little-endian
//! 16      8     cols, u64 little-endian
//! 24      8·r·c entries, f64 little-endian, row-major
//! ```

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"STMATF64";

pub fn write_matrix<W: Write>(mut out: W, m: &Array2<f64>) -> Result<()> {
    let (rows, cols) = m.dim();
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&(rows as u64).to_le_bytes())?;
    out.write_all(&(cols as u64).to_le_bytes())?;
    for x in m.iter() {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn matrix_to_bytes(m: &Array2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + 8 * m.len());
    write_matrix(&mut buf, m).expect("writing to a Vec cannot fail");
    buf
}

/// Reads a matrix; empty matrices and trailing bytes are format errors.
pub fn read_matrix<R: Read>(mut input: R) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    matrix_from_bytes(&bytes)
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 24 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::Format("not a matrix file (bad magic or truncated header)".into()));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty matrix ({rows}×{cols})")));
    }
    let n = rows.checked_mul(cols).ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let body = &bytes[24..];
    if body.len() != n * 8 {
        return Err(Error::Format(format!("expected {} data bytes, found {}", n * 8, body.len())));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
}
