//! Dense integer matrices and the GEMM problem description.
//!
//! Every matrix is row-major with explicit dimensions. The weight operand `A`
//! is `M x K`; the input operand `B` is stored `N x K` so that the reduction
//! over `K` reads contiguous memory for both operands. The result `C` is an
//! `M x N` matrix of `i32`.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Xorshift64Star;

/// Element domain of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemKind {
    U8,
    I8,
    I16,
    I32,
}

impl ElemKind {
    pub const ALL: [ElemKind; 4] = [ElemKind::U8, ElemKind::I8, ElemKind::I16, ElemKind::I32];

    pub fn bits(self) -> u32 {
        match self {
            ElemKind::U8 | ElemKind::I8 => 8,
            ElemKind::I16 => 16,
            ElemKind::I32 => 32,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn is_signed(self) -> bool {
        !matches!(self, ElemKind::U8)
    }

    /// Inclusive representable range.
    pub fn range(self) -> (i64, i64) {
        match self {
            ElemKind::U8 => (0, u8::MAX as i64),
            ElemKind::I8 => (i8::MIN as i64, i8::MAX as i64),
            ElemKind::I16 => (i16::MIN as i64, i16::MAX as i64),
            ElemKind::I32 => (i32::MIN as i64, i32::MAX as i64),
        }
    }

    /// Tag byte used by the binary file formats.
    pub fn tag(self) -> u8 {
        match self {
            ElemKind::U8 => 0,
            ElemKind::I8 => 1,
            ElemKind::I16 => 2,
            ElemKind::I32 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ElemKind::U8,
            1 => ElemKind::I8,
            2 => ElemKind::I16,
            3 => ElemKind::I32,
            _ => return None,
        })
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.to_string() == s)
    }
}

impl fmt::Display for ElemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElemKind::U8 => "u8",
            ElemKind::I8 => "i8",
            ElemKind::I16 => "i16",
            ElemKind::I32 => "i32",
        })
    }
}

mod sealed {
    pub trait Sealed {}
    impl Sealed for u8 {}
    impl Sealed for i8 {}
    impl Sealed for i16 {}
    impl Sealed for i32 {}
}

/// Primitive integer types that can live in a [`MatrixBuf`].
pub trait Element: sealed::Sealed + Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static {
    const KIND: ElemKind;

    fn to_i64(self) -> i64;

    /// Truncating conversion; callers keep values inside the kind's range.
    fn from_i64(v: i64) -> Self;

    fn wrap(data: Vec<Self>) -> MatrixData;

    fn view(data: &MatrixData) -> Option<&[Self]>;

    fn view_mut(data: &mut MatrixData) -> Option<&mut [Self]>;
}

macro_rules! impl_element {
    ($t:ty, $kind:ident) => {
        impl Element for $t {
            const KIND: ElemKind = ElemKind::$kind;

            #[inline]
            fn to_i64(self) -> i64 {
                self as i64
            }

            #[inline]
            fn from_i64(v: i64) -> Self {
                v as $t
            }

            fn wrap(data: Vec<Self>) -> MatrixData {
                MatrixData::$kind(data)
            }

            fn view(data: &MatrixData) -> Option<&[Self]> {
                match data {
                    MatrixData::$kind(v) => Some(v),
                    _ => None,
                }
            }

            fn view_mut(data: &mut MatrixData) -> Option<&mut [Self]> {
                match data {
                    MatrixData::$kind(v) => Some(v),
                    _ => None,
                }
            }
        }
    };
}

impl_element!(u8, U8);
impl_element!(i8, I8);
impl_element!(i16, I16);
impl_element!(i32, I32);

/// Flat element storage tagged with its kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixData {
    U8(Vec<u8>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
}

impl MatrixData {
    pub fn zeros(kind: ElemKind, len: usize) -> Self {
        match kind {
            ElemKind::U8 => MatrixData::U8(vec![0; len]),
            ElemKind::I8 => MatrixData::I8(vec![0; len]),
            ElemKind::I16 => MatrixData::I16(vec![0; len]),
            ElemKind::I32 => MatrixData::I32(vec![0; len]),
        }
    }

    pub fn kind(&self) -> ElemKind {
        match self {
            MatrixData::U8(_) => ElemKind::U8,
            MatrixData::I8(_) => ElemKind::I8,
            MatrixData::I16(_) => ElemKind::I16,
            MatrixData::I32(_) => ElemKind::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            MatrixData::U8(v) => v.len(),
            MatrixData::I8(v) => v.len(),
            MatrixData::I16(v) => v.len(),
            MatrixData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element `i` widened to `i64`.
    pub fn get_i64(&self, i: usize) -> i64 {
        match self {
            MatrixData::U8(v) => v[i] as i64,
            MatrixData::I8(v) => v[i] as i64,
            MatrixData::I16(v) => v[i] as i64,
            MatrixData::I32(v) => v[i] as i64,
        }
    }

    pub fn to_i64_vec(&self) -> Vec<i64> {
        (0..self.len()).map(|i| self.get_i64(i)).collect()
    }

    /// Payload as little-endian bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            MatrixData::U8(v) => v.clone(),
            MatrixData::I8(v) => v.iter().map(|&x| x as u8).collect(),
            MatrixData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            MatrixData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(kind: ElemKind, bytes: &[u8]) -> Self {
        match kind {
            ElemKind::U8 => MatrixData::U8(bytes.to_vec()),
            ElemKind::I8 => MatrixData::I8(bytes.iter().map(|&x| x as i8).collect()),
            ElemKind::I16 => MatrixData::I16(
                bytes
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            ElemKind::I32 => MatrixData::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }
}

/// Dense row-major integer matrix. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixBuf {
    rows: usize,
    cols: usize,
    data: MatrixData,
}

impl MatrixBuf {
    pub fn new<T: Element>(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_data(rows, cols, T::wrap(data))
    }

    pub fn from_data(rows: usize, cols: usize, data: MatrixData) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("matrix dims must be >= 1, got {rows}x{cols}")));
        }
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::shape(format!("{rows}x{cols} overflows usize")))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(MatrixBuf { rows, cols, data })
    }

    /// Builds a matrix from nested rows; handy in tests.
    pub fn from_rows<T: Element>(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(kind: ElemKind, rows: usize, cols: usize) -> Result<Self> {
        Self::from_data(rows, cols, MatrixData::zeros(kind, rows * cols))
    }

    pub fn kind(&self) -> ElemKind {
        self.data.kind()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &MatrixData {
        &self.data
    }

    pub fn into_data(self) -> MatrixData {
        self.data
    }

    pub fn as_slice<T: Element>(&self) -> Option<&[T]> {
        T::view(&self.data)
    }

    /// Typed view, or a shape error naming the expected kind.
    pub fn expect_slice<T: Element>(&self) -> Result<&[T]> {
        T::view(&self.data).ok_or_else(|| {
            Error::shape(format!("expected a {} matrix, got {}", T::KIND, self.kind()))
        })
    }

    pub fn row<T: Element>(&self, r: usize) -> Option<&[T]> {
        self.as_slice::<T>()
            .map(|s| &s[r * self.cols..(r + 1) * self.cols])
    }

    pub fn get_i64(&self, r: usize, c: usize) -> i64 {
        self.data.get_i64(r * self.cols + c)
    }

    /// Sum of all entries, as reported in benchmark checksums.
    pub fn checksum(&self) -> i64 {
        (0..self.data.len()).map(|i| self.data.get_i64(i)).sum()
    }
}

/// Shape and element kinds of one GEMM `C[M x N] = A[M x K] * B[N x K]^T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GemmProblem {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub a_kind: ElemKind,
    pub b_kind: ElemKind,
}

/// The two operand pairings with a kernel path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GemmPath {
    /// `u8` weights times `i8` inputs.
    U8I8,
    /// `i16` weights times `i16` inputs.
    I16,
}

impl GemmPath {
    pub fn a_kind(self) -> ElemKind {
        match self {
            GemmPath::U8I8 => ElemKind::U8,
            GemmPath::I16 => ElemKind::I16,
        }
    }

    pub fn b_kind(self) -> ElemKind {
        match self {
            GemmPath::U8I8 => ElemKind::I8,
            GemmPath::I16 => ElemKind::I16,
        }
    }

    /// Operand element width in bits.
    pub fn element_bits(self) -> u32 {
        self.a_kind().bits()
    }

    pub fn name(self) -> &'static str {
        match self {
            GemmPath::U8I8 => "u8i8",
            GemmPath::I16 => "i16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "u8i8" => Some(GemmPath::U8I8),
            "i16" => Some(GemmPath::I16),
            _ => None,
        }
    }
}

impl fmt::Display for GemmPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl GemmProblem {
    pub fn new(m: usize, n: usize, k: usize, a_kind: ElemKind, b_kind: ElemKind) -> Result<Self> {
        let p = GemmProblem { m, n, k, a_kind, b_kind };
        p.validate()?;
        Ok(p)
    }

    pub fn for_path(path: GemmPath, m: usize, n: usize, k: usize) -> Result<Self> {
        Self::new(m, n, k, path.a_kind(), path.b_kind())
    }

    pub fn path(&self) -> Result<GemmPath> {
        match (self.a_kind, self.b_kind) {
            (ElemKind::U8, ElemKind::I8) => Ok(GemmPath::U8I8),
            (ElemKind::I16, ElemKind::I16) => Ok(GemmPath::I16),
            (a, _) => Err(Error::UnsupportedPath(a)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::shape(format!(
                "problem dims must be >= 1, got {}x{}x{}",
                self.m, self.n, self.k
            )));
        }
        self.path().map(|_| ())
    }

    /// Derives the problem from operands, checking kinds and dims.
    pub fn from_operands(a: &MatrixBuf, b: &MatrixBuf) -> Result<Self> {
        if a.cols() != b.cols() {
            return Err(Error::shape(format!(
                "reduction mismatch: A is {}x{}, B is {}x{} (B is stored N x K)",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Self::new(a.rows(), b.rows(), a.cols(), a.kind(), b.kind())
    }

    /// Checks that `a` is `M x K` of `a_kind` and `b` is `N x K` of `b_kind`.
    pub fn check_operands(&self, a: &MatrixBuf, b: &MatrixBuf) -> Result<()> {
        self.validate()?;
        if a.kind() != self.a_kind || b.kind() != self.b_kind {
            return Err(Error::shape(format!(
                "operand kinds ({}, {}) do not match problem ({}, {})",
                a.kind(),
                b.kind(),
                self.a_kind,
                self.b_kind
            )));
        }
        if (a.rows(), a.cols()) != (self.m, self.k) || (b.rows(), b.cols()) != (self.n, self.k) {
            return Err(Error::shape(format!(
                "operands {}x{} and {}x{} do not fit problem {}x{}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols(),
                self.m,
                self.n,
                self.k
            )));
        }
        Ok(())
    }

    pub fn macs(&self) -> u64 {
        self.m as u64 * self.n as u64 * self.k as u64
    }
}

/// Deterministic random matrix with every element drawn uniformly from
/// `[lo, hi]`, using [`Xorshift64Star`] seeded from `seed`.
pub fn mat_random(kind: ElemKind, rows: usize, cols: usize, seed: u64, lo: i64, hi: i64) -> Result<MatrixBuf> {
    let (min, max) = kind.range();
    if lo > hi || lo < min || hi > max {
        return Err(Error::Range { kind, lo, hi });
    }
    let mut rng = Xorshift64Star::new(seed);
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::shape("matrix too large"))?;
    let span = (hi - lo) as u64 + 1;
    let mut draw = move || lo + rng.below(span) as i64;
    let data = match kind {
        ElemKind::U8 => MatrixData::U8((0..len).map(|_| draw() as u8).collect()),
        ElemKind::I8 => MatrixData::I8((0..len).map(|_| draw() as i8).collect()),
        ElemKind::I16 => MatrixData::I16((0..len).map(|_| draw() as i16).collect()),
        ElemKind::I32 => MatrixData::I32((0..len).map(|_| draw() as i32).collect()),
    };
    MatrixBuf::from_data(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_range_is_constant() {
        let m = mat_random(ElemKind::U8, 2, 2, 7, 0, 0).unwrap();
        assert_eq!(m.as_slice::<u8>().unwrap(), &[0, 0, 0, 0]);
    }

    #[test]
    fn random_stream_is_pinned() {
        let m = mat_random(ElemKind::U8, 64, 64, 42, 0, 255).unwrap();
        let v = m.as_slice::<u8>().unwrap();
        assert_eq!(&v[..8], &[49, 144, 124, 69, 205, 148, 77, 203]);
        assert_eq!(v.iter().map(|&x| x as i64).sum::<i64>(), 522960);
    }

    #[test]
    fn random_is_bounded_and_repeatable() {
        let a = mat_random(ElemKind::I8, 1, 4, 1, -3, 3).unwrap();
        let b = mat_random(ElemKind::I8, 1, 4, 1, -3, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice::<i8>().unwrap().iter().all(|&x| (-3..=3).contains(&x)));
    }

    #[test]
    fn full_u8_range_covers_histogram() {
        let m = mat_random(ElemKind::U8, 64, 64, 42, 0, 255).unwrap();
        let mut seen = [false; 256];
        for &x in m.as_slice::<u8>().unwrap() {
            seen[x as usize] = true;
        }
        assert!(seen.iter().filter(|&&s| s).count() >= 200);
    }

    #[test]
    fn out_of_domain_range_is_rejected() {
        assert!(matches!(
            mat_random(ElemKind::U8, 1, 1, 0, -1, 3),
            Err(Error::Range { .. })
        ));
        assert!(matches!(
            mat_random(ElemKind::I8, 1, 1, 0, 0, 128),
            Err(Error::Range { .. })
        ));
        assert!(mat_random(ElemKind::I16, 1, 1, 0, 5, 4).is_err());
    }

    #[test]
    fn i32_full_range_is_accepted() {
        let m = mat_random(ElemKind::I32, 3, 3, 11, i32::MIN as i64, i32::MAX as i64).unwrap();
        assert_eq!(m.kind(), ElemKind::I32);
    }

    #[test]
    fn dims_are_checked() {
        assert!(MatrixBuf::new::<u8>(0, 1, vec![]).is_err());
        assert!(MatrixBuf::new::<u8>(2, 2, vec![1, 2, 3]).is_err());
        assert!(MatrixBuf::from_rows(&[vec![1u8, 2], vec![3]]).is_err());
    }

    #[test]
    fn problem_kind_pairs() {
        assert!(GemmProblem::new(1, 1, 1, ElemKind::U8, ElemKind::I8).is_ok());
        assert!(GemmProblem::new(1, 1, 1, ElemKind::I16, ElemKind::I16).is_ok());
        assert!(matches!(
            GemmProblem::new(1, 1, 1, ElemKind::I32, ElemKind::I32),
            Err(Error::UnsupportedPath(ElemKind::I32))
        ));
        assert!(GemmProblem::new(1, 1, 1, ElemKind::U8, ElemKind::U8).is_err());
        assert!(GemmProblem::new(0, 1, 1, ElemKind::U8, ElemKind::I8).is_err());
    }

    #[test]
    fn tags_round_trip() {
        for k in ElemKind::ALL {
            assert_eq!(ElemKind::from_tag(k.tag()), Some(k));
        }
        assert_eq!(ElemKind::from_tag(9), None);
    }
}
