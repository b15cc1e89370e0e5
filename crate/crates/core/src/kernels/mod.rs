//! GEMM kernels.
//!
//! * [`gemm_ref`] is the scalar oracle.
//! * [`gemm_conventional`] computes each output as a vector dot product:
//!   pairwise multiply-adds per `w`-element chunk, lane-wise accumulation
//!   across chunks, then a horizontal tree reduction.
//! * [`gemm_ngemm`] works on a packed weight: each `w`-element block holds
//!   `h` reduction elements for `v` rows, the matching `h` elements of one
//!   input row are broadcast across the register, and every lane accumulates
//!   straight into its own output. No horizontal reduction is needed.
//!
//! Both kernels run either on the lane-level emulation in [`lanes`] or on a
//! native AVX2 / AVX-512 path, chosen by [`Backend::select`].

pub mod lanes;
pub mod native;
pub mod reference;
pub mod schedule;

use std::sync::OnceLock;

pub use lanes::{
    add_i32, broadcast_block, hadd_pairs_i32, madd_i16, madd_u8i8, primitive_counts, reset_primitive_counts,
    tree_reduce_i32, LaneVec, PrimitiveCounts, SatMode, TreeSum,
};
pub use native::NativeIsa;
pub use reference::{gemm_ref, gemm_ref_saturating};

use crate::error::{Error, Result};
use crate::layout::{unpack_weights, IsaProfile, KernelShape, PackedWeight};
use crate::matrix::{Element, GemmPath, GemmProblem, MatrixBuf};
use schedule::{schedule, Task};

/// Environment variable capping the native instruction set.
pub const FORCE_ISA_ENV: &str = "FORCE_ISA";

/// Where a kernel executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    /// Lane-level emulation; works for every shape on every host.
    Emulated,
    Native(NativeIsa),
}

fn parse_forced(value: Option<&str>) -> Option<IsaProfile> {
    let value = value?.trim();
    match value.parse() {
        Ok(isa) => Some(isa),
        Err(_) => {
            eprintln!("warning: ignoring {FORCE_ISA_ENV}={value:?} (expected scalar, v256 or v512)");
            None
        }
    }
}

/// `FORCE_ISA` as read once at first use.
pub fn forced_isa() -> Option<IsaProfile> {
    static FORCED: OnceLock<Option<IsaProfile>> = OnceLock::new();
    *FORCED.get_or_init(|| parse_forced(std::env::var(FORCE_ISA_ENV).ok().as_deref()))
}

fn native_allowed(isa: NativeIsa, cap: Option<IsaProfile>) -> bool {
    let within_cap = cap.is_none_or(|c| isa.profile().vector_bits() <= c.vector_bits());
    within_cap && isa.is_available()
}

/// Widest ISA profile with a usable native path, after the `FORCE_ISA` cap.
pub fn host_isa() -> IsaProfile {
    let cap = forced_isa();
    [NativeIsa::Avx512, NativeIsa::Avx2]
        .into_iter()
        .find(|&isa| native_allowed(isa, cap))
        .map_or(IsaProfile::Scalar, NativeIsa::profile)
}

impl Backend {
    /// Native when the host supports `isa` and `FORCE_ISA` permits it,
    /// emulation otherwise.
    pub fn select(isa: IsaProfile) -> Backend {
        match NativeIsa::for_profile(isa) {
            Some(n) if native_allowed(n, forced_isa()) => Backend::Native(n),
            _ => Backend::Emulated,
        }
    }

    pub fn is_native(&self) -> bool {
        matches!(self, Backend::Native(_))
    }

    fn check(&self, shape: &KernelShape) -> Result<()> {
        if let Backend::Native(n) = self {
            if n.profile() != shape.isa() {
                return Err(Error::shape(format!(
                    "native {n:?} path cannot run a {}-bit kernel shape",
                    shape.vector_bits()
                )));
            }
            if !n.is_available() {
                return Err(Error::Precondition(format!("host CPU lacks {n:?}")));
            }
        }
        Ok(())
    }
}

/// Which kernel computes a GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ref,
    Conventional,
    Ngemm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ref => "ref",
            Variant::Conventional => "conventional",
            Variant::Ngemm => "ngemm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ref" => Some(Variant::Ref),
            "conventional" => Some(Variant::Conventional),
            "ngemm" => Some(Variant::Ngemm),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

// ---- emulated kernels ----

/// Phase one for the 8-bit path: `u8 x i8` pairs, then pairs of pairs, so
/// each `i32` lane holds `h = 4` products.
fn phase_one_u8i8(a: &LaneVec, b: &LaneVec, mode: SatMode) -> Result<LaneVec> {
    let c = madd_u8i8(a, b, mode)?;
    match mode {
        SatMode::HardwareSaturating => madd_i16(&c, &LaneVec::new(vec![1i16; c.len()])),
        SatMode::WideningExact => hadd_pairs_i32(&c),
    }
}

fn phase_one(path: GemmPath, a: &LaneVec, b: &LaneVec, mode: SatMode) -> Result<LaneVec> {
    match path {
        GemmPath::U8I8 => phase_one_u8i8(a, b, mode),
        GemmPath::I16 => madd_i16(a, b),
    }
}

fn padded_chunk<T: Element>(row: &[T], start: usize, len: usize) -> LaneVec {
    let mut v = vec![T::default(); len];
    let end = (start + len).min(row.len());
    v[..end - start].copy_from_slice(&row[start..end]);
    LaneVec::new(v)
}

fn conventional_emulated_typed<A: Element, B: Element>(
    a: &MatrixBuf,
    b: &MatrixBuf,
    shape: &KernelShape,
    mode: SatMode,
) -> Result<Vec<i32>> {
    let (m, n, k, w) = (a.rows(), b.rows(), a.cols(), shape.w());
    let path = shape.path();
    let mut c = vec![0i32; m * n];
    for i in 0..m {
        let arow = a.row::<A>(i).expect("kind checked");
        for j in 0..n {
            let brow = b.row::<B>(j).expect("kind checked");
            let mut acc = LaneVec::zeros(crate::matrix::ElemKind::I32, shape.v());
            for start in (0..k).step_by(w) {
                let e = phase_one(path, &padded_chunk(arow, start, w), &padded_chunk(brow, start, w), mode)?;
                acc = add_i32(&acc, &e)?;
            }
            c[i * n + j] = tree_reduce_i32(&acc)?.value;
        }
    }
    Ok(c)
}

fn ngemm_emulated_typed<A: Element, B: Element>(
    p: &PackedWeight,
    b: &MatrixBuf,
    mode: SatMode,
    tasks: &[Task],
    c: &mut [i32],
) -> Result<()> {
    let shape = p.shape();
    let (h, w, n) = (shape.h(), shape.w(), b.rows());
    let packed = p.as_slice::<A>().expect("kind checked");
    for t in tasks {
        for j in t.n0..t.n0 + t.ncols {
            let brow = &b.row::<B>(j).expect("kind checked")[..t.k_end];
            let mut acc = LaneVec::zeros(crate::matrix::ElemKind::I32, shape.v());
            for s in 0..t.steps {
                let off = t.a_off + s * w;
                let block = LaneVec::new(packed[off..off + w].to_vec());
                let slice = padded_chunk(brow, t.k0 + s * h, h);
                let bcast = broadcast_block(slice.as_slice::<B>().unwrap(), w)?;
                acc = add_i32(&acc, &phase_one(shape.path(), &block, &bcast, mode)?)?;
            }
            let lanes = acc.as_slice::<i32>().unwrap();
            for r in 0..t.rows {
                let cell = &mut c[(t.m0 + r) * n + j];
                *cell = cell.wrapping_add(lanes[r]);
            }
        }
    }
    Ok(())
}

// ---- public entry points ----

fn check_kinds(shape: &KernelShape, a_kind: crate::matrix::ElemKind, b: &MatrixBuf) -> Result<GemmPath> {
    let path = shape.path();
    if a_kind != path.a_kind() || b.kind() != path.b_kind() {
        return Err(Error::shape(format!(
            "operands ({a_kind}, {}) do not match the {path} kernel shape",
            b.kind()
        )));
    }
    Ok(path)
}

/// Conventional tree-reduction GEMM over unpacked row-major `a` (`M x K`)
/// and `b` (`N x K`), on the backend chosen by [`Backend::select`].
pub fn gemm_conventional(a: &MatrixBuf, b: &MatrixBuf, shape: &KernelShape, mode: SatMode) -> Result<MatrixBuf> {
    gemm_conventional_with(a, b, shape, mode, Backend::select(shape.isa()))
}

pub fn gemm_conventional_with(
    a: &MatrixBuf,
    b: &MatrixBuf,
    shape: &KernelShape,
    mode: SatMode,
    backend: Backend,
) -> Result<MatrixBuf> {
    let path = check_kinds(shape, a.kind(), b)?;
    GemmProblem::from_operands(a, b)?;
    backend.check(shape)?;
    let c = match backend {
        Backend::Emulated => match path {
            GemmPath::U8I8 => conventional_emulated_typed::<u8, i8>(a, b, shape, mode)?,
            GemmPath::I16 => conventional_emulated_typed::<i16, i16>(a, b, shape, mode)?,
        },
        #[cfg(target_arch = "x86_64")]
        Backend::Native(isa) => {
            let mut c = vec![0i32; a.rows() * b.rows()];
            // SAFETY: `check` confirmed host support and the shape's width;
            // kinds and dims were validated above.
            unsafe { native::conventional(isa, path, a, b, mode, &mut c) };
            c
        }
        #[cfg(not(target_arch = "x86_64"))]
        Backend::Native(_) => unreachable!("no native path on this target"),
    };
    MatrixBuf::new(a.rows(), b.rows(), c)
}

/// Broadcast GEMM over a packed weight and an `N x K` input, on the backend
/// chosen by [`Backend::select`].
pub fn gemm_ngemm(p: &PackedWeight, b: &MatrixBuf, mode: SatMode) -> Result<MatrixBuf> {
    gemm_ngemm_with(p, b, mode, Backend::select(p.shape().isa()))
}

pub fn gemm_ngemm_with(p: &PackedWeight, b: &MatrixBuf, mode: SatMode, backend: Backend) -> Result<MatrixBuf> {
    let path = check_kinds(p.shape(), p.kind(), b)?;
    if b.cols() != p.k_orig() {
        return Err(Error::shape(format!(
            "input has K={} but the packed weight has K={}",
            b.cols(),
            p.k_orig()
        )));
    }
    backend.check(p.shape())?;
    let tasks = schedule(p, b.rows());
    let mut c = vec![0i32; p.m_orig() * b.rows()];
    match backend {
        Backend::Emulated => match path {
            GemmPath::U8I8 => ngemm_emulated_typed::<u8, i8>(p, b, mode, &tasks, &mut c)?,
            GemmPath::I16 => ngemm_emulated_typed::<i16, i16>(p, b, mode, &tasks, &mut c)?,
        },
        #[cfg(target_arch = "x86_64")]
        Backend::Native(isa) => {
            // SAFETY: `check` confirmed host support and that the packed
            // shape matches `isa`; `b` is `n x k_orig` of the path's kind.
            unsafe { native::ngemm(isa, p, b, mode, &tasks, &mut c) }
        }
        #[cfg(not(target_arch = "x86_64"))]
        Backend::Native(_) => unreachable!("no native path on this target"),
    }
    MatrixBuf::new(p.m_orig(), b.rows(), c)
}

/// 16-bit GEMM from a packed `i16` weight. The conventional variant runs on
/// the unpacked weight, as it has no use for the packed layout.
pub fn gemm_i16(p: &PackedWeight, b: &MatrixBuf, variant: Variant) -> Result<MatrixBuf> {
    if p.shape().path() != GemmPath::I16 {
        return Err(Error::shape("gemm_i16 needs a 16-bit packed weight"));
    }
    match variant {
        Variant::Ngemm => gemm_ngemm(p, b, SatMode::WideningExact),
        Variant::Conventional => gemm_conventional(&unpack_weights(p)?, b, p.shape(), SatMode::WideningExact),
        Variant::Ref => {
            let a = unpack_weights(p)?;
            let problem = GemmProblem::from_operands(&a, b)?;
            gemm_ref(&a, b, &problem)
        }
    }
}
