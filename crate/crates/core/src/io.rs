//! Bit-exact binary files for matrices and packed weights.
//!
//! Matrix file, all integers little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `NGMM`                           |
//! | 4      | 4    | version `u32` = 1                      |
//! | 8      | 1    | kind tag (0 u8, 1 i8, 2 i16, 3 i32)    |
//! | 9      | 8    | rows `u64`                             |
//! | 17     | 8    | cols `u64`                             |
//! | 25     | ...  | row-major payload, `rows*cols` elements |
//!
//! A packed weight file is a matrix file holding the `m_pad x k_pad` packed
//! buffer, followed by a 59-byte trailer: magic `NGPK`, `w`, `h`, `v` as
//! `u32`, `tm`, `tn`, `tk` as `u64`, the permutation as three ASCII letters
//! (outermost first), then `m_orig` and `k_orig` as `u64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layout::{KernelShape, PackedWeight, Permutation, TileConfig};
use crate::matrix::{ElemKind, MatrixBuf, MatrixData};

pub const MATRIX_MAGIC: [u8; 4] = *b"NGMM";
pub const PACKED_MAGIC: [u8; 4] = *b"NGPK";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 25;
pub const TRAILER_LEN: usize = 59;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated {what}: need {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.pos as u64;
        usize::try_from(self.u64(what)?).map_err(|_| Error::format(at, format!("{what} exceeds usize")))
    }
}

fn encode_header(out: &mut Vec<u8>, kind: ElemKind, rows: usize, cols: usize) {
    out.extend_from_slice(&MATRIX_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind.tag());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
}

pub fn encode_matrix(m: &MatrixBuf) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len() * m.kind().bytes());
    encode_header(&mut out, m.kind(), m.rows(), m.cols());
    out.extend_from_slice(&m.data().to_le_bytes());
    out
}

fn decode_matrix_at(c: &mut Cursor<'_>) -> Result<MatrixBuf> {
    let magic = c.take(4, "magic")?;
    if magic != MATRIX_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:02x?}, expected NGMM")));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let tag = c.u8("kind tag")?;
    let kind = ElemKind::from_tag(tag).ok_or_else(|| Error::format(8, format!("unknown kind tag {tag}")))?;
    let rows = c.usize("rows")?;
    let cols = c.usize("cols")?;
    if rows == 0 || cols == 0 {
        return Err(Error::format(9, format!("empty dims {rows}x{cols}")));
    }
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(kind.bytes()))
        .ok_or_else(|| Error::format(9, "dims overflow"))?;
    let payload = c.take(len, "payload")?;
    MatrixBuf::from_data(rows, cols, MatrixData::from_le_bytes(kind, payload))
}

pub fn decode_matrix(bytes: &[u8]) -> Result<MatrixBuf> {
    let mut c = Cursor::new(bytes);
    let m = decode_matrix_at(&mut c)?;
    if c.pos != bytes.len() {
        let extra = bytes.len() - c.pos;
        let hint = if bytes[c.pos..].starts_with(&PACKED_MAGIC) {
            " (this is a packed weight file)"
        } else {
            ""
        };
        return Err(Error::format(c.pos as u64, format!("{extra} trailing bytes{hint}")));
    }
    Ok(m)
}

pub fn mat_write(m: &MatrixBuf, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_matrix(m))?;
    Ok(())
}

pub fn mat_read(path: impl AsRef<Path>) -> Result<MatrixBuf> {
    decode_matrix(&fs::read(path)?)
}

pub fn encode_packed(p: &PackedWeight) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + p.payload_bytes() + TRAILER_LEN);
    encode_header(&mut out, p.kind(), p.m_pad(), p.k_pad());
    out.extend_from_slice(&p.data().to_le_bytes());
    let (shape, tile) = (p.shape(), p.tile());
    out.extend_from_slice(&PACKED_MAGIC);
    for x in [shape.w(), shape.h(), shape.v()] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    for x in [tile.tm, tile.tn, tile.tk] {
        out.extend_from_slice(&(x as u64).to_le_bytes());
    }
    out.extend_from_slice(&tile.permutation.to_ascii());
    out.extend_from_slice(&(p.m_orig() as u64).to_le_bytes());
    out.extend_from_slice(&(p.k_orig() as u64).to_le_bytes());
    out
}

pub fn decode_packed(bytes: &[u8]) -> Result<PackedWeight> {
    let mut c = Cursor::new(bytes);
    let body = decode_matrix_at(&mut c)?;
    let trailer_at = c.pos as u64;
    let magic = c.take(4, "packed trailer")?;
    if magic != PACKED_MAGIC {
        return Err(Error::format(trailer_at, "missing NGPK trailer (plain matrix file?)"));
    }
    let w = c.u32("w")? as usize;
    let h = c.u32("h")? as usize;
    let v = c.u32("v")? as usize;
    let shape = KernelShape::new(w, h, v).map_err(|e| Error::format(trailer_at + 4, e.to_string()))?;
    let tm = c.usize("tm")?;
    let tn = c.usize("tn")?;
    let tk = c.usize("tk")?;
    let perm_at = c.pos as u64;
    let perm_bytes: [u8; 3] = c.take(3, "permutation")?.try_into().unwrap();
    let permutation = Permutation::from_ascii(perm_bytes).map_err(|e| Error::format(perm_at, e.to_string()))?;
    let m_orig = c.usize("m_orig")?;
    let k_orig = c.usize("k_orig")?;
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos as u64, "trailing bytes after packed trailer"));
    }
    let tile = TileConfig::new(tm, tn, tk, permutation);
    let body_dims = (body.rows(), body.cols());
    let p = PackedWeight::from_parts(shape, tile, m_orig, k_orig, body.into_data())
        .map_err(|e| Error::format(trailer_at, e.to_string()))?;
    if (p.m_pad(), p.k_pad()) != body_dims {
        return Err(Error::format(9, "header dims disagree with trailer"));
    }
    Ok(p)
}

pub fn packed_write(p: &PackedWeight, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_packed(p))?;
    Ok(())
}

pub fn packed_read(path: impl AsRef<Path>) -> Result<PackedWeight> {
    decode_packed(&fs::read(path)?)
}

/// Contents of a file that may hold either format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnyMatrixFile {
    Plain(MatrixBuf),
    Packed(PackedWeight),
}

pub fn read_any(path: impl AsRef<Path>) -> Result<AnyMatrixFile> {
    let bytes = fs::read(path)?;
    let mut c = Cursor::new(&bytes);
    decode_matrix_at(&mut c)?;
    if c.pos == bytes.len() {
        decode_matrix(&bytes).map(AnyMatrixFile::Plain)
    } else {
        decode_packed(&bytes).map(AnyMatrixFile::Packed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{kernel_shape, pack_weights, IsaProfile};
    use crate::matrix::mat_random;

    #[test]
    fn header_bytes_are_exact() {
        let m = MatrixBuf::new::<i32>(1, 1, vec![0]).unwrap();
        let bytes = encode_matrix(&m);
        assert_eq!(
            bytes,
            [
                b'N', b'G', b'M', b'M', 1, 0, 0, 0, 3, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0
            ]
        );
        assert_eq!(decode_matrix(&bytes).unwrap(), m);
    }

    #[test]
    fn i16_payload_is_little_endian() {
        let m = MatrixBuf::new::<i16>(1, 2, vec![0x0102, -2]).unwrap();
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[HEADER_LEN..], &[0x02, 0x01, 0xfe, 0xff]);
    }

    #[test]
    fn corrupted_magic() {
        let m = mat_random(ElemKind::U8, 3, 3, 1, 0, 255).unwrap();
        let mut bytes = encode_matrix(&m);
        bytes[1] = b'X';
        assert!(matches!(decode_matrix(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload() {
        let m = mat_random(ElemKind::I16, 4, 4, 1, -9, 9).unwrap();
        let bytes = encode_matrix(&m);
        let err = decode_matrix(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(decode_matrix(&bytes[..10]).is_err());
    }

    #[test]
    fn unknown_kind_tag() {
        let m = MatrixBuf::new::<u8>(1, 1, vec![5]).unwrap();
        let mut bytes = encode_matrix(&m);
        bytes[8] = 7;
        assert!(matches!(decode_matrix(&bytes), Err(Error::Format { offset: 8, .. })));
    }

    #[test]
    fn bad_version() {
        let m = MatrixBuf::new::<u8>(1, 1, vec![5]).unwrap();
        let mut bytes = encode_matrix(&m);
        bytes[4] = 2;
        assert!(matches!(decode_matrix(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn packed_round_trip_and_probe() {
        let dir = tempfile::tempdir().unwrap();
        let s = kernel_shape(IsaProfile::V256, ElemKind::U8).unwrap();
        let a = mat_random(ElemKind::U8, 9, 7, 2, 0, 255).unwrap();
        let p = pack_weights(&a, s, crate::layout::TileConfig::default_for(&s)).unwrap();
        let bytes = encode_packed(&p);
        assert_eq!(bytes.len(), HEADER_LEN + p.payload_bytes() + TRAILER_LEN);
        assert_eq!(decode_packed(&bytes).unwrap(), p);
        // a packed file is not a plain matrix file, and vice versa
        assert!(decode_matrix(&bytes).is_err());
        assert!(decode_packed(&encode_matrix(&a)).is_err());

        let pa = dir.path().join("a.ngmm");
        let pp = dir.path().join("a.ngpk");
        mat_write(&a, &pa).unwrap();
        packed_write(&p, &pp).unwrap();
        assert_eq!(read_any(&pa).unwrap(), AnyMatrixFile::Plain(a));
        assert_eq!(read_any(&pp).unwrap(), AnyMatrixFile::Packed(p));
    }

    #[test]
    fn packed_trailer_damage() {
        let s = kernel_shape(IsaProfile::V256, ElemKind::U8).unwrap();
        let a = mat_random(ElemKind::U8, 2, 2, 2, 0, 255).unwrap();
        let p = pack_weights(&a, s, crate::layout::TileConfig::new(8, 1, 4, Permutation::MNK)).unwrap();
        let good = encode_packed(&p);
        let trailer = HEADER_LEN + p.payload_bytes();

        let mut bad = good.clone();
        bad[trailer + 4] = 33; // w no longer h*v
        assert!(matches!(decode_packed(&bad), Err(Error::Format { .. })));

        let mut bad = good.clone();
        bad[trailer + 40] = b'X'; // permutation letter
        assert!(matches!(decode_packed(&bad), Err(Error::Format { .. })));

        assert!(decode_packed(&good[..good.len() - 3]).is_err());
    }
}
