//! Native tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       8           magic "RZRQTNSR"
//! 8       4           rank r (u32)
//! 12      8*r         dims (u64 each, outermost first)
//! 12+8r   4*prod      values, IEEE-754 binary32 little-endian, row-major
//! ```
//!
//! Files must end exactly after the last value.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const TENSOR_MAGIC: &[u8; 8] = b"RZRQTNSR";

/// Arbitrary-rank f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn into_matrix(self) -> Result<DenseMatrix> {
        let (rows, cols) = match self.dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            d => {
                return Err(Error::shape(format!(
                    "expected a rank-1 or rank-2 tensor, got dims {d:?}"
                )))
            }
        };
        DenseMatrix::new(rows, cols, self.data)
    }
}

impl From<&DenseMatrix> for Tensor {
    fn from(m: &DenseMatrix) -> Self {
        Tensor {
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(8)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::format("bad tensor magic"));
    }
    let rank = cur.u32()? as usize;
    let mut dims = Vec::with_capacity(rank.min(16));
    let mut count: usize = 1;
    for _ in 0..rank {
        let d = usize::try_from(cur.u64()?).map_err(|_| Error::format("dimension overflow"))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::format("element count overflow"))?;
        dims.push(d);
    }
    let need = count
        .checked_mul(4)
        .ok_or_else(|| Error::format("payload size overflow"))?;
    if cur.remaining() < need {
        return Err(Error::format(format!(
            "truncated payload: need {need} bytes, have {}",
            cur.remaining()
        )));
    }
    if cur.remaining() > need {
        return Err(Error::format(format!(
            "payload length mismatch: {} trailing bytes",
            cur.remaining() - need
        )));
    }
    let data = cur
        .take(need)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims, data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

/// Reads a rank-2 (or rank-1, as a single row) tensor file.
pub fn load_tensor_file(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_tensor(path)?.into_matrix()
}

pub fn save_tensor_file(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_tensor(path, &Tensor::from(m))
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Little-endian byte reader shared by the container decoders.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(format!(
                "truncated at byte {}: wanted {n} more",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
