//! Bit-exact packed storage for quantized matrices.
//!
//! Each row is packed according to its bit mode and padded to a whole byte:
//!
//! * ternary: five trits per byte, `byte = sum_k (code_k + 1) * 3^k`,
//!   `k = 0..4`, so bytes lie in `[0, 242]`; missing tail trits are code 0.
//! * 4-bit: two codes per byte, low nibble first, stored as `code + 8` in
//!   `[1, 15]`; a missing tail nibble is stored as 0.
//! * 8-bit: one two's-complement byte per code, `-128` never appears.
//!
//! The full file layout is documented in `docs/FORMATS.md`.

use std::fs;
use std::path::Path;

use half::f16;

use crate::container::{write_atomic, Cursor};
use crate::error::{Error, Result};
use crate::quantizer::{BitMode, GroupQuantConfig, QuantizedGroupMatrix};

pub const BLOB_MAGIC: &[u8; 8] = b"RZRQPAKD";
pub const BLOB_VERSION: u32 = 1;

const TRIT_PAD: i8 = 0;
const MAX_TRIT_BYTE: u8 = 242;

/// Per-row encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackFormat {
    TernaryPack,
    NibblePack,
    BytePack,
}

impl PackFormat {
    pub fn for_mode(mode: BitMode) -> Self {
        match mode {
            BitMode::Ternary => PackFormat::TernaryPack,
            BitMode::Int4 => PackFormat::NibblePack,
            BitMode::Int8 => PackFormat::BytePack,
        }
    }

    /// Bytes needed for one row of `cols` codes.
    pub fn row_bytes(self, cols: usize) -> usize {
        match self {
            PackFormat::TernaryPack => cols.div_ceil(5),
            PackFormat::NibblePack => cols.div_ceil(2),
            PackFormat::BytePack => cols,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobHeader {
    pub rows: usize,
    pub cols: usize,
    pub config: GroupQuantConfig,
    pub row_modes: Vec<BitMode>,
    /// FNV-1a 64 over the row mode tags.
    pub modes_digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedBlob {
    pub header: BlobHeader,
    pub payload: Vec<u8>,
    pub scales: Vec<f16>,
}

impl PackedBlob {
    /// Format shared by every row, if the rows agree.
    pub fn format(&self) -> Option<PackFormat> {
        let mut f = self
            .header
            .row_modes
            .iter()
            .map(|&m| PackFormat::for_mode(m));
        let first = f.next()?;
        f.all(|x| x == first).then_some(first)
    }

    /// Storage bits per weight for codes and scales together.
    pub fn physical_bits_per_weight(&self) -> f64 {
        let n = (self.header.rows * self.header.cols) as f64;
        8.0 * (self.payload.len() + 2 * self.scales.len()) as f64 / n
    }
}

/// Closed-form code payload size for the given rows.
pub fn payload_len(row_modes: &[BitMode], cols: usize) -> usize {
    row_modes
        .iter()
        .map(|&m| PackFormat::for_mode(m).row_bytes(cols))
        .sum()
}

pub fn modes_digest(modes: &[BitMode]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for m in modes {
        h ^= m.tag() as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn encode_trits(codes: &[i8]) -> u8 {
    debug_assert!(codes.len() <= 5);
    let mut v = 0u8;
    let mut p = 1u8;
    for k in 0..5 {
        let c = codes.get(k).copied().unwrap_or(TRIT_PAD);
        v += (c + 1) as u8 * p;
        p = p.wrapping_mul(3);
    }
    v
}

pub fn decode_trits(byte: u8) -> Result<[i8; 5]> {
    if byte > MAX_TRIT_BYTE {
        return Err(Error::format(format!("trit byte {byte} exceeds 242")));
    }
    let mut v = byte;
    let mut out = [0i8; 5];
    for t in out.iter_mut() {
        *t = (v % 3) as i8 - 1;
        v /= 3;
    }
    Ok(out)
}

fn pack_row(codes: &[i8], mode: BitMode, out: &mut Vec<u8>) {
    match PackFormat::for_mode(mode) {
        PackFormat::TernaryPack => out.extend(codes.chunks(5).map(encode_trits)),
        PackFormat::NibblePack => out.extend(codes.chunks(2).map(|c| {
            let lo = (c[0] + 8) as u8;
            let hi = c.get(1).map_or(0, |&x| (x + 8) as u8);
            lo | (hi << 4)
        })),
        PackFormat::BytePack => out.extend(codes.iter().map(|&c| c as u8)),
    }
}

fn unpack_row(bytes: &[u8], cols: usize, mode: BitMode, out: &mut Vec<i8>) -> Result<()> {
    let start = out.len();
    match PackFormat::for_mode(mode) {
        PackFormat::TernaryPack => {
            for &b in bytes {
                out.extend_from_slice(&decode_trits(b)?);
            }
            if out[start + cols..].iter().any(|&t| t != TRIT_PAD) {
                return Err(Error::format("nonzero ternary padding"));
            }
        }
        PackFormat::NibblePack => {
            for &b in bytes {
                for nib in [b & 0x0f, b >> 4] {
                    out.push(nib as i8 - 8);
                }
            }
            // stored 0 decodes to -8: legal only as tail padding
            if out[start..start + cols].contains(&-8) {
                return Err(Error::format("nibble value 0 inside the code region"));
            }
            if out[start + cols..].iter().any(|&c| c != -8) {
                return Err(Error::format("nonzero nibble padding"));
            }
        }
        PackFormat::BytePack => {
            out.extend(bytes.iter().map(|&b| b as i8));
            if out[start..].contains(&i8::MIN) {
                return Err(Error::format("byte code -128 outside the 8-bit range"));
            }
        }
    }
    out.truncate(start + cols);
    Ok(())
}

pub fn pack(q: &QuantizedGroupMatrix) -> Result<PackedBlob> {
    let cols = q.cols();
    let mut payload = Vec::with_capacity(payload_len(q.row_modes(), cols));
    for (i, &mode) in q.row_modes().iter().enumerate() {
        let codes = q.row_codes(i);
        if let Some(c) = codes.iter().find(|&&c| !mode.contains(c)) {
            return Err(Error::param(format!(
                "row {i}: code {c} out of range for {mode:?}"
            )));
        }
        pack_row(codes, mode, &mut payload);
    }
    Ok(PackedBlob {
        header: BlobHeader {
            rows: q.rows(),
            cols,
            config: *q.config(),
            row_modes: q.row_modes().to_vec(),
            modes_digest: modes_digest(q.row_modes()),
        },
        payload,
        scales: q.scales().to_vec(),
    })
}

pub fn unpack(b: &PackedBlob) -> Result<QuantizedGroupMatrix> {
    let h = &b.header;
    if h.row_modes.len() != h.rows {
        return Err(Error::format("row mode count differs from rows"));
    }
    if modes_digest(&h.row_modes) != h.modes_digest {
        return Err(Error::format("row mode digest mismatch"));
    }
    let need = payload_len(&h.row_modes, h.cols);
    if b.payload.len() != need {
        return Err(Error::format(format!(
            "payload size mismatch: expected {need} bytes, got {}",
            b.payload.len()
        )));
    }
    let need_scales = h.rows * h.config.groups(h.cols);
    if b.scales.len() != need_scales {
        return Err(Error::format(format!(
            "scale count mismatch: expected {need_scales}, got {}",
            b.scales.len()
        )));
    }
    let mut codes = Vec::with_capacity(h.rows * h.cols);
    let mut off = 0;
    for &mode in &h.row_modes {
        let n = PackFormat::for_mode(mode).row_bytes(h.cols);
        unpack_row(&b.payload[off..off + n], h.cols, mode, &mut codes)?;
        off += n;
    }
    QuantizedGroupMatrix::from_parts(
        h.rows,
        h.cols,
        h.config,
        h.row_modes.clone(),
        codes,
        b.scales.clone(),
    )
}

pub fn encode_blob(b: &PackedBlob) -> Vec<u8> {
    let h = &b.header;
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.rows as u64).to_le_bytes());
    out.extend_from_slice(&(h.cols as u64).to_le_bytes());
    out.extend_from_slice(&(h.config.group_size as u64).to_le_bytes());
    out.extend_from_slice(&h.config.beta.to_le_bytes());
    out.extend_from_slice(&h.config.epsilon.to_le_bytes());
    out.extend_from_slice(&h.modes_digest.to_le_bytes());
    out.extend(h.row_modes.iter().map(|m| m.tag()));
    out.extend_from_slice(&(b.payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&b.payload);
    for s in &b.scales {
        out.extend_from_slice(&s.to_bits().to_le_bytes());
    }
    out
}

pub fn decode_blob(bytes: &[u8]) -> Result<PackedBlob> {
    let mut cur = Cursor::new(bytes);
    if cur.take(8)? != BLOB_MAGIC {
        return Err(Error::format("bad packed-blob magic"));
    }
    let version = cur.u32()?;
    if version != BLOB_VERSION {
        return Err(Error::format(format!("unsupported blob version {version}")));
    }
    let as_usize = |v: u64| usize::try_from(v).map_err(|_| Error::format("size overflow"));
    let rows = as_usize(cur.u64()?)?;
    let cols = as_usize(cur.u64()?)?;
    let group_size = as_usize(cur.u64()?)?;
    let beta = f64::from_bits(cur.u64()?);
    let epsilon = f64::from_bits(cur.u64()?);
    let config = GroupQuantConfig::new(group_size, beta, epsilon)?;
    let modes_digest = cur.u64()?;
    let row_modes = cur
        .take(rows)?
        .iter()
        .map(|&t| BitMode::from_tag(t))
        .collect::<Result<Vec<_>>>()?;
    let plen = as_usize(cur.u64()?)?;
    let payload = cur.take(plen)?.to_vec();
    let nscales = rows
        .checked_mul(config.groups(cols))
        .ok_or_else(|| Error::format("scale count overflow"))?;
    let mut scales = Vec::with_capacity(nscales);
    for _ in 0..nscales {
        let b = cur.take(2)?;
        scales.push(f16::from_bits(u16::from_le_bytes([b[0], b[1]])));
    }
    if cur.remaining() != 0 {
        return Err(Error::format(format!("{} trailing bytes", cur.remaining())));
    }
    Ok(PackedBlob {
        header: BlobHeader {
            rows,
            cols,
            config,
            row_modes,
            modes_digest,
        },
        payload,
        scales,
    })
}

pub fn write_blob(path: impl AsRef<Path>, b: &PackedBlob) -> Result<()> {
    write_atomic(path, &encode_blob(b))
}

pub fn read_blob(path: impl AsRef<Path>) -> Result<PackedBlob> {
    decode_blob(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{build_plan, Scheme};
    use crate::matrix::Matrix;
    use crate::quantizer::quantize_matrix;

    #[test]
    fn trit_hand_cases() {
        assert_eq!(encode_trits(&[1, -1, 0, 0, 1]), 200);
        assert_eq!(encode_trits(&[0; 5]), 121);
        assert_eq!(decode_trits(200).unwrap(), [1, -1, 0, 0, 1]);
        assert_eq!(encode_trits(&[1; 5]), 242);
        assert!(decode_trits(243).is_err());
    }

    #[test]
    fn nibble_hand_case() {
        let mut out = Vec::new();
        pack_row(&[7, -4], BitMode::Int4, &mut out);
        assert_eq!(out, vec![0x4F]);
        let mut out = Vec::new();
        pack_row(&[-7, 0, 3], BitMode::Int4, &mut out);
        assert_eq!(out, vec![0x81, 0x0B]);
    }

    fn sample(rows: usize, cols: usize, rho: f64) -> QuantizedGroupMatrix {
        let w = Matrix::<f32>::from_fn(rows, cols, |i, j| ((i * 31 + j * 17) % 13) as f32 - 6.0);
        let plan = build_plan(rows, rho, Scheme::SuperGroup).unwrap();
        let cfg = GroupQuantConfig::with_group_size(4).unwrap();
        quantize_matrix(&w, &plan, &cfg).unwrap()
    }

    #[test]
    fn blob_roundtrip_with_tails() {
        for cols in [1, 3, 5, 7, 11] {
            let q = sample(6, cols, 0.5);
            let blob = pack(&q).unwrap();
            assert_eq!(blob.payload.len(), payload_len(q.row_modes(), cols));
            let bytes = encode_blob(&blob);
            let back = decode_blob(&bytes).unwrap();
            assert_eq!(back, blob);
            assert_eq!(unpack(&back).unwrap(), q);
        }
    }

    #[test]
    fn truncated_and_corrupt_blobs() {
        let blob = pack(&sample(4, 9, 0.25)).unwrap();
        let bytes = encode_blob(&blob);
        assert!(decode_blob(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_blob(&bad).is_err());

        let mut short = blob.clone();
        short.payload.pop();
        assert!(unpack(&short).is_err());

        let mut digest = blob.clone();
        digest.header.modes_digest ^= 1;
        assert!(unpack(&digest).is_err());

        // first row is 4-bit: forcing a zero nibble in the code region
        let mut zero_nib = blob.clone();
        zero_nib.payload[0] &= 0xf0;
        assert!(unpack(&zero_nib).is_err());

        // a ternary row byte above 242
        let t_off = PackFormat::NibblePack.row_bytes(9);
        let mut big = blob;
        big.payload[t_off] = 250;
        assert!(unpack(&big).is_err());
    }

    #[test]
    fn physical_bits_close_to_closed_form() {
        let w = Matrix::<f32>::from_fn(4, 1000, |i, j| ((i + j) % 5) as f32 - 2.0);
        let cfg = GroupQuantConfig::with_group_size(250).unwrap();
        let q =
            quantize_matrix(&w, &build_plan(4, 0.0, Scheme::SuperGroup).unwrap(), &cfg).unwrap();
        let b = pack(&q).unwrap();
        assert_eq!(b.format(), Some(PackFormat::TernaryPack));
        assert!((b.physical_bits_per_weight() - (1.6 + 16.0 / 250.0)).abs() < 1e-12);
    }
}
