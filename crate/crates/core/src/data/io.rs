//! Binary matrix format: magic `AFRM`, version `u32`, rows `u64`, cols `u64`,
//! then row-major little-endian `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AfrError, Result};
use crate::matrix::Matrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"AFRM";
pub const MATRIX_VERSION: u32 = 1;

/// Appends `rows u64, cols u64, values` to `out`.
pub fn encode_matrix_body(m: &Matrix, out: &mut Vec<u8>) {
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over an in-memory byte buffer with truncation diagnostics.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(AfrError::format(
                self.path,
                format!("truncated: needed {n} bytes at offset {}, {} left", self.pos, self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn matrix_body(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&n| n.checked_mul(8).is_some())
            .ok_or_else(|| AfrError::format(self.path, format!("implausible shape {rows}x{cols}")))?;
        let raw = self.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Matrix::new(rows, cols, data).map_err(|e| AfrError::format(self.path, e.to_string()))
    }
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    encode_matrix_body(m, &mut out);
    out
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != MATRIX_MAGIC {
        return Err(AfrError::format(path, "bad magic, expected AFRM"));
    }
    let version = r.u32()?;
    if version != MATRIX_VERSION {
        return Err(AfrError::format(path, format!("unsupported version {version}")));
    }
    let m = r.matrix_body()?;
    if m.is_empty() {
        return Err(AfrError::format(path, format!("empty {}x{} matrix", m.rows(), m.cols())));
    }
    if r.remaining() != 0 {
        return Err(AfrError::format(path, format!("{} trailing bytes", r.remaining())));
    }
    Ok(m)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    if m.is_empty() {
        return Err(AfrError::Contract(format!(
            "refusing to save empty {}x{} matrix to {}",
            m.rows(),
            m.cols(),
            path.display()
        )));
    }
    write_bytes(path, &encode_matrix(m))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AfrError::io(path, e))?;
    decode_matrix(&bytes, path)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| AfrError::io(path, e))?;
    f.write_all(bytes).map_err(|e| AfrError::io(path, e))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| AfrError::io(path, e))?;
    Ok(s)
}

/// One integer per line.
pub fn save_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| AfrError::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Comma-separated rows, full round-trip precision.
pub fn save_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut s = String::new();
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    write_bytes(path.as_ref(), s.as_bytes())
}
