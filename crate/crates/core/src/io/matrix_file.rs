//! `FPNM` matrix files: magic, `u32` rows, `u32` cols, row-major LE `f64`.

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"FPNM";
const HEADER_LEN: usize = 12;

pub fn encode_matrix(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    if &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::Parse { offset: 0, message: format!("bad magic {:?}, expected \"FPNM\"", &bytes[..4]) });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Parse { offset: 4, message: format!("{rows}x{cols} overflows") })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        let what = if payload.len() < expected { "truncated payload" } else { "trailing bytes" };
        return Err(Error::Parse {
            offset: HEADER_LEN + payload.len().min(expected),
            message: format!(
                "{what}: {rows}x{cols} needs {expected} payload bytes, found {}",
                payload.len()
            ),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::new(rows, cols, data)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_atomic(path.as_ref(), &encode_matrix(m))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}
