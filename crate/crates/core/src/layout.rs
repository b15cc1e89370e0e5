//! Vectorization parameters and the two-level packed layout of the weight
//! matrix.
//!
//! The inner layout groups `h` consecutive elements along `K` for each of `v`
//! consecutive rows along `M` into one contiguous block of `w = h * v`
//! elements (row `i`, column `j` of the block lands at `i * h + j`). One such
//! block is exactly one vector load for the broadcast kernel.
//!
//! The outer layout groups blocks into `tm x tk` tiles. Tiles are ordered by
//! the relative position of `M` and `K` in the tile permutation (the earlier
//! label is the outer loop). Inside a tile, blocks advance along `K` first and
//! then along `M`, so all blocks feeding one row-block of `C` within a tile
//! are adjacent in memory. The matrix is zero-padded up to multiples of
//! `(tm, tk)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::{Element, ElemKind, GemmPath, MatrixBuf, MatrixData};

/// Target vector instruction width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IsaProfile {
    /// 128-bit portable emulation granularity.
    Scalar,
    /// 256-bit vectors (AVX2 class).
    V256,
    /// 512-bit vectors (AVX-512 class).
    V512,
}

impl IsaProfile {
    pub const ALL: [IsaProfile; 3] = [IsaProfile::Scalar, IsaProfile::V256, IsaProfile::V512];

    pub fn vector_bits(self) -> u32 {
        match self {
            IsaProfile::Scalar => 128,
            IsaProfile::V256 => 256,
            IsaProfile::V512 => 512,
        }
    }

    pub fn from_vector_bits(bits: u32) -> Option<Self> {
        match bits {
            128 => Some(IsaProfile::Scalar),
            256 => Some(IsaProfile::V256),
            512 => Some(IsaProfile::V512),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IsaProfile::Scalar => "scalar",
            IsaProfile::V256 => "v256",
            IsaProfile::V512 => "v512",
        }
    }
}

impl fmt::Display for IsaProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IsaProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scalar" => Ok(IsaProfile::Scalar),
            "v256" => Ok(IsaProfile::V256),
            "v512" => Ok(IsaProfile::V512),
            other => Err(Error::config(format!("unknown isa '{other}'"))),
        }
    }
}

/// Lane count `w`, elements per 32-bit accumulation `h`, and rows per block
/// `v`, with `w = h * v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelShape {
    w: usize,
    h: usize,
    v: usize,
}

impl KernelShape {
    pub fn new(w: usize, h: usize, v: usize) -> Result<Self> {
        if !(h == 2 || h == 4) {
            return Err(Error::config(format!("h must be 2 or 4, got {h}")));
        }
        if v == 0 || h * v != w {
            return Err(Error::config(format!("w={w} != h*v = {h}*{v}")));
        }
        if IsaProfile::from_vector_bits(32 * v as u32).is_none() {
            return Err(Error::config(format!("v={v} matches no vector width")));
        }
        Ok(KernelShape { w, h, v })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn v(&self) -> usize {
        self.v
    }

    /// 8-bit shapes accumulate four products per 32-bit lane, 16-bit two.
    pub fn path(&self) -> GemmPath {
        if self.h == 4 {
            GemmPath::U8I8
        } else {
            GemmPath::I16
        }
    }

    pub fn element_bits(&self) -> u32 {
        32 / self.h as u32
    }

    pub fn vector_bits(&self) -> u32 {
        32 * self.v as u32
    }

    pub fn isa(&self) -> IsaProfile {
        IsaProfile::from_vector_bits(self.vector_bits()).expect("validated at construction")
    }

    /// Kind the packed weight matrix must have.
    pub fn weight_kind(&self) -> ElemKind {
        self.path().a_kind()
    }
}

/// `(w, h, v)` for an ISA and an operand kind.
pub fn kernel_shape(isa: IsaProfile, kind: ElemKind) -> Result<KernelShape> {
    let h = match kind {
        ElemKind::U8 | ElemKind::I8 => 4,
        ElemKind::I16 => 2,
        ElemKind::I32 => return Err(Error::UnsupportedPath(kind)),
    };
    let w = (isa.vector_bits() / kind.bits()) as usize;
    KernelShape::new(w, h, w / h)
}

/// Offset of element `(m_in_block, k_in_block)` inside one `h x v` block.
pub fn inner_offset(m_in_block: usize, k_in_block: usize, shape: &KernelShape) -> Result<usize> {
    if m_in_block >= shape.v || k_in_block >= shape.h {
        return Err(Error::Index {
            row: m_in_block,
            col: k_in_block,
            rows: shape.v,
            cols: shape.h,
        });
    }
    Ok(m_in_block * shape.h + k_in_block)
}

/// Loop dimension label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    M,
    N,
    K,
}

impl Dim {
    fn letter(self) -> char {
        match self {
            Dim::M => 'M',
            Dim::N => 'N',
            Dim::K => 'K',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'M' => Some(Dim::M),
            'N' => Some(Dim::N),
            'K' => Some(Dim::K),
            _ => None,
        }
    }
}

/// Loop-nest order over the three GEMM dimensions, outermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Permutation([Dim; 3]);

impl Permutation {
    pub const MNK: Permutation = Permutation([Dim::M, Dim::N, Dim::K]);
    pub const MKN: Permutation = Permutation([Dim::M, Dim::K, Dim::N]);
    pub const NMK: Permutation = Permutation([Dim::N, Dim::M, Dim::K]);
    pub const NKM: Permutation = Permutation([Dim::N, Dim::K, Dim::M]);
    pub const KMN: Permutation = Permutation([Dim::K, Dim::M, Dim::N]);
    pub const KNM: Permutation = Permutation([Dim::K, Dim::N, Dim::M]);

    pub const ALL: [Permutation; 6] = [
        Self::MNK,
        Self::MKN,
        Self::NMK,
        Self::NKM,
        Self::KMN,
        Self::KNM,
    ];

    pub fn new(order: [Dim; 3]) -> Result<Self> {
        let has = |d| order.contains(&d);
        if has(Dim::M) && has(Dim::N) && has(Dim::K) {
            Ok(Permutation(order))
        } else {
            Err(Error::config(format!("{order:?} is not a permutation of M, N, K")))
        }
    }

    pub fn order(&self) -> [Dim; 3] {
        self.0
    }

    fn position(&self, d: Dim) -> usize {
        self.0.iter().position(|&x| x == d).expect("permutation holds all dims")
    }

    /// True when the `M` tile loop encloses the `K` tile loop.
    pub fn m_outside_k(&self) -> bool {
        self.position(Dim::M) < self.position(Dim::K)
    }

    pub fn to_ascii(&self) -> [u8; 3] {
        self.0.map(|d| d.letter() as u8)
    }

    pub fn from_ascii(bytes: [u8; 3]) -> Result<Self> {
        let mut order = [Dim::M; 3];
        for (slot, b) in order.iter_mut().zip(bytes) {
            *slot = Dim::from_letter(b as char)
                .ok_or_else(|| Error::config(format!("bad permutation byte {b:#04x}")))?;
        }
        Self::new(order)
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            write!(f, "{}", d.letter().to_ascii_lowercase())?;
        }
        Ok(())
    }
}

impl FromStr for Permutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes: [u8; 3] = s
            .as_bytes()
            .try_into()
            .map_err(|_| Error::config(format!("permutation '{s}' must have 3 letters")))?;
        Self::from_ascii(bytes)
    }
}

/// Loop tiling choice `<tm, tn, tk>` plus loop order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileConfig {
    pub tm: usize,
    pub tn: usize,
    pub tk: usize,
    pub permutation: Permutation,
}

impl TileConfig {
    pub fn new(tm: usize, tn: usize, tk: usize, permutation: Permutation) -> Self {
        TileConfig { tm, tn, tk, permutation }
    }

    /// `<beta * v, tn, alpha * h>`.
    pub fn from_multipliers(shape: &KernelShape, alpha: usize, beta: usize, tn: usize, permutation: Permutation) -> Self {
        TileConfig {
            tm: beta * shape.v,
            tn,
            tk: alpha * shape.h,
            permutation,
        }
    }

    /// Default when no tuned record applies: four row-blocks, 16 columns,
    /// 512 bytes of reduction per tile.
    pub fn default_for(shape: &KernelShape) -> Self {
        let tk = DEFAULT_TK_BYTES / (shape.element_bits() as usize / 8);
        Self::from_multipliers(shape, tk / shape.h, 4, 16, Permutation::MNK)
    }

    pub fn alpha(&self, shape: &KernelShape) -> usize {
        self.tk / shape.h
    }

    pub fn beta(&self, shape: &KernelShape) -> usize {
        self.tm / shape.v
    }

    pub fn validate(&self, shape: &KernelShape) -> Result<()> {
        if self.tk == 0 || !self.tk.is_multiple_of(shape.h) {
            return Err(Error::config(format!("tk={} is not a positive multiple of h={}", self.tk, shape.h)));
        }
        if self.tm == 0 || !self.tm.is_multiple_of(shape.v) {
            return Err(Error::config(format!("tm={} is not a positive multiple of v={}", self.tm, shape.v)));
        }
        if self.tn == 0 {
            return Err(Error::config("tn must be >= 1"));
        }
        Ok(())
    }
}

impl fmt::Display for TileConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.tm, self.tn, self.tk, self.permutation)
    }
}

const DEFAULT_TK_BYTES: usize = 512;

fn round_up(x: usize, to: usize) -> usize {
    x.div_ceil(to) * to
}

/// Weight matrix marshalled into the two-level layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWeight {
    shape: KernelShape,
    tile: TileConfig,
    m_orig: usize,
    k_orig: usize,
    m_pad: usize,
    k_pad: usize,
    data: MatrixData,
}

impl PackedWeight {
    /// Reassembles a packed weight from its parts, checking every invariant
    /// except the zero padding (see [`unpack_weights`]).
    pub fn from_parts(shape: KernelShape, tile: TileConfig, m_orig: usize, k_orig: usize, data: MatrixData) -> Result<Self> {
        tile.validate(&shape)?;
        if m_orig == 0 || k_orig == 0 {
            return Err(Error::shape("original dims must be >= 1"));
        }
        if data.kind() != shape.weight_kind() {
            return Err(Error::shape(format!(
                "packed data kind {} does not match the {} path",
                data.kind(),
                shape.path()
            )));
        }
        let m_pad = round_up(m_orig, tile.tm);
        let k_pad = round_up(k_orig, tile.tk);
        if data.len() != m_pad * k_pad {
            return Err(Error::shape(format!(
                "packed length {} != m_pad*k_pad = {m_pad}*{k_pad}",
                data.len()
            )));
        }
        Ok(PackedWeight {
            shape,
            tile,
            m_orig,
            k_orig,
            m_pad,
            k_pad,
            data,
        })
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn tile(&self) -> &TileConfig {
        &self.tile
    }

    pub fn m_orig(&self) -> usize {
        self.m_orig
    }

    pub fn k_orig(&self) -> usize {
        self.k_orig
    }

    pub fn m_pad(&self) -> usize {
        self.m_pad
    }

    pub fn k_pad(&self) -> usize {
        self.k_pad
    }

    pub fn data(&self) -> &MatrixData {
        &self.data
    }

    pub fn as_slice<T: Element>(&self) -> Option<&[T]> {
        T::view(&self.data)
    }

    pub fn kind(&self) -> ElemKind {
        self.data.kind()
    }

    pub fn tiles_m(&self) -> usize {
        self.m_pad / self.tile.tm
    }

    pub fn tiles_k(&self) -> usize {
        self.k_pad / self.tile.tk
    }

    /// Flat position of tile `(mt, kt)`'s first element.
    pub fn tile_base(&self, mt: usize, kt: usize) -> usize {
        let index = if self.tile.permutation.m_outside_k() {
            mt * self.tiles_k() + kt
        } else {
            kt * self.tiles_m() + mt
        };
        index * self.tile.tm * self.tile.tk
    }

    /// Flat position of padded coordinate `(row, col)`.
    pub fn offset_of(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.m_pad && col < self.k_pad);
        let (tm, tk) = (self.tile.tm, self.tile.tk);
        let (h, v, w) = (self.shape.h, self.shape.v, self.shape.w);
        let (rr, cc) = (row % tm, col % tk);
        let block = (rr / v) * (tk / h) + cc / h;
        self.tile_base(row / tm, col / tk) + block * w + (rr % v) * h + cc % h
    }

    /// Inverse of [`offset_of`](Self::offset_of).
    pub fn coord_of(&self, offset: usize) -> (usize, usize) {
        let (tm, tk) = (self.tile.tm, self.tile.tk);
        let (h, v, w) = (self.shape.h, self.shape.v, self.shape.w);
        let tile_len = tm * tk;
        let (tile_index, in_tile) = (offset / tile_len, offset % tile_len);
        let (mt, kt) = if self.tile.permutation.m_outside_k() {
            (tile_index / self.tiles_k(), tile_index % self.tiles_k())
        } else {
            (tile_index % self.tiles_m(), tile_index / self.tiles_m())
        };
        let (block, in_block) = (in_tile / w, in_tile % w);
        let alpha = tk / h;
        let row = mt * tm + (block / alpha) * v + in_block / h;
        let col = kt * tk + (block % alpha) * h + in_block % h;
        (row, col)
    }

    fn check_padding<T: Element>(&self, data: &[T]) -> Result<()> {
        for (i, &x) in data.iter().enumerate() {
            if x != T::default() {
                let (row, col) = self.coord_of(i);
                if row >= self.m_orig || col >= self.k_orig {
                    return Err(Error::Corruption { row, col });
                }
            }
        }
        Ok(())
    }

    /// Fails with a corruption error if any padded cell is nonzero.
    pub fn verify_padding(&self) -> Result<()> {
        match &self.data {
            MatrixData::U8(d) => self.check_padding(d),
            MatrixData::I16(d) => self.check_padding(d),
            MatrixData::I8(d) => self.check_padding(d),
            MatrixData::I32(d) => self.check_padding(d),
        }
    }

    /// Packed payload length in bytes.
    pub fn payload_bytes(&self) -> usize {
        self.data.len() * self.data.kind().bytes()
    }
}

fn pack_typed<T: Element>(src: &[T], cols: usize, layout: &PackedWeight) -> Vec<T> {
    let mut out = vec![T::default(); layout.m_pad * layout.k_pad];
    for (r, row) in src.chunks_exact(cols).enumerate() {
        for (c, &x) in row.iter().enumerate() {
            out[layout.offset_of(r, c)] = x;
        }
    }
    out
}

fn unpack_typed<T: Element>(data: &[T], p: &PackedWeight) -> Vec<T> {
    let mut out = vec![T::default(); p.m_orig * p.k_orig];
    for r in 0..p.m_orig {
        for c in 0..p.k_orig {
            out[r * p.k_orig + c] = data[p.offset_of(r, c)];
        }
    }
    out
}

/// Marshals weight matrix `a` into the packed layout, zero-padding `M` and
/// `K` up to multiples of `tm` and `tk`.
pub fn pack_weights(a: &MatrixBuf, shape: KernelShape, tile: TileConfig) -> Result<PackedWeight> {
    tile.validate(&shape)?;
    if a.kind() != shape.weight_kind() {
        return Err(Error::shape(format!(
            "weight kind {} does not match the {} kernel path (expects {})",
            a.kind(),
            shape.path(),
            shape.weight_kind()
        )));
    }
    let mut p = PackedWeight {
        shape,
        tile,
        m_orig: a.rows(),
        k_orig: a.cols(),
        m_pad: round_up(a.rows(), tile.tm),
        k_pad: round_up(a.cols(), tile.tk),
        data: MatrixData::U8(Vec::new()),
    };
    p.data = match a.data() {
        MatrixData::U8(d) => MatrixData::U8(pack_typed(d, a.cols(), &p)),
        MatrixData::I16(d) => MatrixData::I16(pack_typed(d, a.cols(), &p)),
        _ => unreachable!("kind checked against shape"),
    };
    Ok(p)
}

/// Recovers the original `m_orig x k_orig` weight matrix.
pub fn unpack_weights(p: &PackedWeight) -> Result<MatrixBuf> {
    p.verify_padding()?;
    let data = match &p.data {
        MatrixData::U8(d) => MatrixData::U8(unpack_typed(d, p)),
        MatrixData::I16(d) => MatrixData::I16(unpack_typed(d, p)),
        MatrixData::I8(d) => MatrixData::I8(unpack_typed(d, p)),
        MatrixData::I32(d) => MatrixData::I32(unpack_typed(d, p)),
    };
    MatrixBuf::from_data(p.m_orig, p.k_orig, data)
}
