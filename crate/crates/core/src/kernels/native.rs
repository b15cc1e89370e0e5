//! Native x86-64 fast paths (AVX2 and AVX-512BW).
//!
//! The kernels are written once against the [`Simd`] trait and instantiated
//! inside `#[target_feature]` entry points, so every primitive is inlined into
//! code compiled for the right instruction set. Callers must check host
//! support first; see [`NativeIsa::is_available`].

use crate::layout::IsaProfile;

use super::lanes::{LaneVec, SatMode, TreeSum};

/// Instruction sets with a native implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NativeIsa {
    Avx2,
    Avx512,
}

impl NativeIsa {
    pub fn profile(self) -> IsaProfile {
        match self {
            NativeIsa::Avx2 => IsaProfile::V256,
            NativeIsa::Avx512 => IsaProfile::V512,
        }
    }

    pub fn for_profile(isa: IsaProfile) -> Option<Self> {
        match isa {
            IsaProfile::Scalar => None,
            IsaProfile::V256 => Some(NativeIsa::Avx2),
            IsaProfile::V512 => Some(NativeIsa::Avx512),
        }
    }

    /// Whether the host CPU can execute this path.
    pub fn is_available(self) -> bool {
        #[cfg(target_arch = "x86_64")]
        {
            match self {
                NativeIsa::Avx2 => is_x86_feature_detected!("avx2"),
                NativeIsa::Avx512 => {
                    is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx512bw") && is_x86_feature_detected!("avx2")
                }
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    }

    fn bytes(self) -> usize {
        self.profile().vector_bits() as usize / 8
    }
}

/// Register-sized native `madd_u8i8`; `None` when the lane counts do not
/// fill one register or the host lacks the instruction set.
pub fn madd_u8i8(isa: NativeIsa, a: &LaneVec, b: &LaneVec, mode: SatMode) -> Option<LaneVec> {
    let (a, b) = (a.as_slice::<u8>()?, b.as_slice::<i8>()?);
    if a.len() != isa.bytes() || b.len() != isa.bytes() || !isa.is_available() {
        return None;
    }
    #[cfg(target_arch = "x86_64")]
    unsafe {
        Some(x86::madd_u8i8(isa, a, b, mode))
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        let _ = mode;
        None
    }
}

/// Register-sized native `madd_i16`.
pub fn madd_i16(isa: NativeIsa, a: &LaneVec, b: &LaneVec) -> Option<LaneVec> {
    let (a, b) = (a.as_slice::<i16>()?, b.as_slice::<i16>()?);
    if a.len() * 2 != isa.bytes() || b.len() * 2 != isa.bytes() || !isa.is_available() {
        return None;
    }
    #[cfg(target_arch = "x86_64")]
    unsafe {
        Some(x86::madd_i16(isa, a, b))
    }
    #[cfg(not(target_arch = "x86_64"))]
    None
}

/// Register-sized native horizontal sum by halving shuffles.
pub fn tree_reduce_i32(isa: NativeIsa, v: &LaneVec) -> Option<TreeSum> {
    let v = v.as_slice::<i32>()?;
    if v.len() * 4 != isa.bytes() || !isa.is_available() {
        return None;
    }
    #[cfg(target_arch = "x86_64")]
    unsafe {
        Some(x86::tree_reduce(isa, v))
    }
    #[cfg(not(target_arch = "x86_64"))]
    None
}

/// Native 32-bit broadcast of a 4-byte `i8` block across one register.
pub fn broadcast_i8x4(isa: NativeIsa, b: [i8; 4]) -> Option<LaneVec> {
    if !isa.is_available() {
        return None;
    }
    #[cfg(target_arch = "x86_64")]
    unsafe {
        Some(x86::broadcast_i8x4(isa, b))
    }
    #[cfg(not(target_arch = "x86_64"))]
    None
}

#[cfg(target_arch = "x86_64")]
pub(crate) use x86::{conventional, ngemm};

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    use super::NativeIsa;
    use crate::kernels::lanes::{LaneVec, SatMode, TreeSum};
    use crate::kernels::schedule::Task;
    use crate::layout::PackedWeight;
    use crate::matrix::{GemmPath, MatrixBuf};

    pub(crate) trait Simd {
        type V: Copy;
        const BYTES: usize;
        const REDUCE_STEPS: u32;

        unsafe fn zero() -> Self::V;
        unsafe fn load(p: *const u8) -> Self::V;
        unsafe fn splat_i32(x: i32) -> Self::V;
        /// `u8 x i8` adjacent-pair multiply-add with `i16` saturation.
        unsafe fn maddubs(a: Self::V, b: Self::V) -> Self::V;
        /// `i16 x i16` adjacent-pair multiply-add into `i32`.
        unsafe fn madd16(a: Self::V, b: Self::V) -> Self::V;
        unsafe fn ones16() -> Self::V;
        unsafe fn add32(a: Self::V, b: Self::V) -> Self::V;
        /// Zero-extends the lower and upper halves of a `u8` register to `i16`.
        unsafe fn widen_u8(a: Self::V) -> (Self::V, Self::V);
        /// Sign-extends the lower and upper halves of an `i8` register to `i16`.
        unsafe fn widen_i8(a: Self::V) -> (Self::V, Self::V);
        unsafe fn reduce32(v: Self::V) -> i32;
        unsafe fn store(v: Self::V, out: *mut u8);
        /// Transposes four accumulators of one lane per row and adds row `r`
        /// (4 values) into `c + r * stride`, for every lane row.
        unsafe fn add_rows4(acc: &[Self::V; 4], c: *mut i32, stride: usize);

        #[inline(always)]
        unsafe fn load_partial(p: *const u8, len: usize) -> Self::V {
            let mut buf = [0u8; 64];
            std::ptr::copy_nonoverlapping(p, buf.as_mut_ptr(), len);
            Self::load(buf.as_ptr())
        }
    }

    pub(crate) struct Avx2;
    pub(crate) struct Avx512;

    impl Simd for Avx2 {
        type V = __m256i;
        const BYTES: usize = 32;
        const REDUCE_STEPS: u32 = 3;

        #[inline(always)]
        unsafe fn zero() -> __m256i {
            _mm256_setzero_si256()
        }
        #[inline(always)]
        unsafe fn load(p: *const u8) -> __m256i {
            _mm256_loadu_si256(p.cast())
        }
        #[inline(always)]
        unsafe fn splat_i32(x: i32) -> __m256i {
            _mm256_set1_epi32(x)
        }
        #[inline(always)]
        unsafe fn maddubs(a: __m256i, b: __m256i) -> __m256i {
            _mm256_maddubs_epi16(a, b)
        }
        #[inline(always)]
        unsafe fn madd16(a: __m256i, b: __m256i) -> __m256i {
            _mm256_madd_epi16(a, b)
        }
        #[inline(always)]
        unsafe fn ones16() -> __m256i {
            _mm256_set1_epi16(1)
        }
        #[inline(always)]
        unsafe fn add32(a: __m256i, b: __m256i) -> __m256i {
            _mm256_add_epi32(a, b)
        }
        #[inline(always)]
        unsafe fn widen_u8(a: __m256i) -> (__m256i, __m256i) {
            (
                _mm256_cvtepu8_epi16(_mm256_castsi256_si128(a)),
                _mm256_cvtepu8_epi16(_mm256_extracti128_si256::<1>(a)),
            )
        }
        #[inline(always)]
        unsafe fn widen_i8(a: __m256i) -> (__m256i, __m256i) {
            (
                _mm256_cvtepi8_epi16(_mm256_castsi256_si128(a)),
                _mm256_cvtepi8_epi16(_mm256_extracti128_si256::<1>(a)),
            )
        }
        #[inline(always)]
        unsafe fn reduce32(v: __m256i) -> i32 {
            // 8 -> 4 -> 2 -> 1 lanes
            let s = _mm_add_epi32(_mm256_castsi256_si128(v), _mm256_extracti128_si256::<1>(v));
            let s = _mm_add_epi32(s, _mm_shuffle_epi32::<0b01_00_11_10>(s));
            let s = _mm_add_epi32(s, _mm_shuffle_epi32::<0b10_11_00_01>(s));
            _mm_cvtsi128_si32(s)
        }
        #[inline(always)]
        unsafe fn store(v: __m256i, out: *mut u8) {
            _mm256_storeu_si256(out.cast(), v)
        }
        #[inline(always)]
        unsafe fn add_rows4(acc: &[__m256i; 4], c: *mut i32, stride: usize) {
            let u = transpose4x4_256(acc);
            for (r, &x) in u.iter().enumerate() {
                add_row(c.add(r * stride), _mm256_castsi256_si128(x));
                add_row(c.add((r + 4) * stride), _mm256_extracti128_si256::<1>(x));
            }
        }
    }

    /// Per 128-bit lane, row `r` of a 4x4 transpose ends up in output `r`.
    #[inline(always)]
    unsafe fn transpose4x4_256(a: &[__m256i; 4]) -> [__m256i; 4] {
        let t0 = _mm256_unpacklo_epi32(a[0], a[1]);
        let t1 = _mm256_unpackhi_epi32(a[0], a[1]);
        let t2 = _mm256_unpacklo_epi32(a[2], a[3]);
        let t3 = _mm256_unpackhi_epi32(a[2], a[3]);
        [
            _mm256_unpacklo_epi64(t0, t2),
            _mm256_unpackhi_epi64(t0, t2),
            _mm256_unpacklo_epi64(t1, t3),
            _mm256_unpackhi_epi64(t1, t3),
        ]
    }

    #[inline(always)]
    unsafe fn add_row(c: *mut i32, x: __m128i) {
        let p = c.cast::<__m128i>();
        _mm_storeu_si128(p, _mm_add_epi32(_mm_loadu_si128(p), x));
    }

    impl Simd for Avx512 {
        type V = __m512i;
        const BYTES: usize = 64;
        const REDUCE_STEPS: u32 = 4;

        #[inline(always)]
        unsafe fn zero() -> __m512i {
            _mm512_setzero_si512()
        }
        #[inline(always)]
        unsafe fn load(p: *const u8) -> __m512i {
            _mm512_loadu_si512(p.cast())
        }
        #[inline(always)]
        unsafe fn splat_i32(x: i32) -> __m512i {
            _mm512_set1_epi32(x)
        }
        #[inline(always)]
        unsafe fn maddubs(a: __m512i, b: __m512i) -> __m512i {
            _mm512_maddubs_epi16(a, b)
        }
        #[inline(always)]
        unsafe fn madd16(a: __m512i, b: __m512i) -> __m512i {
            _mm512_madd_epi16(a, b)
        }
        #[inline(always)]
        unsafe fn ones16() -> __m512i {
            _mm512_set1_epi16(1)
        }
        #[inline(always)]
        unsafe fn add32(a: __m512i, b: __m512i) -> __m512i {
            _mm512_add_epi32(a, b)
        }
        #[inline(always)]
        unsafe fn widen_u8(a: __m512i) -> (__m512i, __m512i) {
            (
                _mm512_cvtepu8_epi16(_mm512_castsi512_si256(a)),
                _mm512_cvtepu8_epi16(_mm512_extracti64x4_epi64::<1>(a)),
            )
        }
        #[inline(always)]
        unsafe fn widen_i8(a: __m512i) -> (__m512i, __m512i) {
            (
                _mm512_cvtepi8_epi16(_mm512_castsi512_si256(a)),
                _mm512_cvtepi8_epi16(_mm512_extracti64x4_epi64::<1>(a)),
            )
        }
        #[inline(always)]
        unsafe fn reduce32(v: __m512i) -> i32 {
            // 16 -> 8 lanes, then the 256-bit halving sequence
            let s = _mm256_add_epi32(_mm512_castsi512_si256(v), _mm512_extracti64x4_epi64::<1>(v));
            Avx2::reduce32(s)
        }
        #[inline(always)]
        unsafe fn store(v: __m512i, out: *mut u8) {
            _mm512_storeu_si512(out.cast(), v)
        }
        #[inline(always)]
        unsafe fn add_rows4(acc: &[__m512i; 4], c: *mut i32, stride: usize) {
            let t0 = _mm512_unpacklo_epi32(acc[0], acc[1]);
            let t1 = _mm512_unpackhi_epi32(acc[0], acc[1]);
            let t2 = _mm512_unpacklo_epi32(acc[2], acc[3]);
            let t3 = _mm512_unpackhi_epi32(acc[2], acc[3]);
            let u = [
                _mm512_unpacklo_epi64(t0, t2),
                _mm512_unpackhi_epi64(t0, t2),
                _mm512_unpacklo_epi64(t1, t3),
                _mm512_unpackhi_epi64(t1, t3),
            ];
            for (r, &x) in u.iter().enumerate() {
                add_row(c.add(r * stride), _mm512_extracti32x4_epi32::<0>(x));
                add_row(c.add((r + 4) * stride), _mm512_extracti32x4_epi32::<1>(x));
                add_row(c.add((r + 8) * stride), _mm512_extracti32x4_epi32::<2>(x));
                add_row(c.add((r + 12) * stride), _mm512_extracti32x4_epi32::<3>(x));
            }
        }
    }

    // ---- register-level primitives, for agreement testing ----

    macro_rules! with_isa {
        ($isa:expr, $f:ident ( $($arg:expr),* )) => {
            match $isa {
                NativeIsa::Avx2 => avx2::$f($($arg),*),
                NativeIsa::Avx512 => avx512::$f($($arg),*),
            }
        };
    }

    #[inline(always)]
    unsafe fn prim_madd_u8i8<S: Simd>(a: &[u8], b: &[i8], mode: SatMode) -> LaneVec {
        let (x, y) = (S::load(a.as_ptr()), S::load(b.as_ptr().cast()));
        match mode {
            SatMode::HardwareSaturating => {
                let mut out = vec![0i16; S::BYTES / 2];
                S::store(S::maddubs(x, y), out.as_mut_ptr().cast());
                LaneVec::new(out)
            }
            SatMode::WideningExact => {
                let ((xl, xh), (yl, yh)) = (S::widen_u8(x), S::widen_i8(y));
                let mut out = vec![0i32; S::BYTES / 2];
                S::store(S::madd16(xl, yl), out.as_mut_ptr().cast());
                S::store(S::madd16(xh, yh), out[S::BYTES / 4..].as_mut_ptr().cast());
                LaneVec::new(out)
            }
        }
    }

    #[inline(always)]
    unsafe fn prim_madd_i16<S: Simd>(a: &[i16], b: &[i16]) -> LaneVec {
        let mut out = vec![0i32; S::BYTES / 4];
        S::store(
            S::madd16(S::load(a.as_ptr().cast()), S::load(b.as_ptr().cast())),
            out.as_mut_ptr().cast(),
        );
        LaneVec::new(out)
    }

    #[inline(always)]
    unsafe fn prim_tree_reduce<S: Simd>(v: &[i32]) -> TreeSum {
        TreeSum {
            value: S::reduce32(S::load(v.as_ptr().cast())),
            steps: S::REDUCE_STEPS,
        }
    }

    #[inline(always)]
    unsafe fn prim_broadcast<S: Simd>(b: [i8; 4]) -> LaneVec {
        let mut out = vec![0i8; S::BYTES];
        S::store(S::splat_i32(i32::from_le_bytes(b.map(|x| x as u8))), out.as_mut_ptr().cast());
        LaneVec::new(out)
    }

    pub(super) unsafe fn madd_u8i8(isa: NativeIsa, a: &[u8], b: &[i8], mode: SatMode) -> LaneVec {
        with_isa!(isa, madd_u8i8(a, b, mode))
    }

    pub(super) unsafe fn madd_i16(isa: NativeIsa, a: &[i16], b: &[i16]) -> LaneVec {
        with_isa!(isa, madd_i16(a, b))
    }

    pub(super) unsafe fn tree_reduce(isa: NativeIsa, v: &[i32]) -> TreeSum {
        with_isa!(isa, tree_reduce(v))
    }

    pub(super) unsafe fn broadcast_i8x4(isa: NativeIsa, b: [i8; 4]) -> LaneVec {
        with_isa!(isa, broadcast(b))
    }

    // ---- conventional kernel: per-output dot product + tree reduction ----

    #[inline(always)]
    unsafe fn conv_step<S: Simd, const EXACT: bool>(acc: S::V, x: S::V, y: S::V, ones: S::V) -> S::V {
        if EXACT {
            let ((xl, xh), (yl, yh)) = (S::widen_u8(x), S::widen_i8(y));
            S::add32(acc, S::add32(S::madd16(xl, yl), S::madd16(xh, yh)))
        } else {
            S::add32(acc, S::madd16(S::maddubs(x, y), ones))
        }
    }

    const NR: usize = 4;
    const CONV_PANEL_BYTES: usize = 16 * 1024;

    /// Dot products of one A row against `NC` B rows, sharing the A loads,
    /// each finished by its own tree reduction.
    #[inline(always)]
    unsafe fn conv_cols<S: Simd, const EXACT: bool, const U8: bool, const NC: usize>(
        ar: *const u8,
        rows: [*const u8; NC],
        bytes: usize,
        out: *mut i32,
    ) {
        let ones = S::ones16();
        let mut acc = [S::zero(); NC];
        let step = |acc: &mut [S::V; NC], x: S::V, ys: [S::V; NC]| {
            for j in 0..NC {
                acc[j] = if U8 {
                    conv_step::<S, EXACT>(acc[j], x, ys[j], ones)
                } else {
                    S::add32(acc[j], S::madd16(x, ys[j]))
                };
            }
        };
        let full = bytes / S::BYTES * S::BYTES;
        let mut t = 0;
        while t < full {
            step(&mut acc, S::load(ar.add(t)), rows.map(|r| S::load(r.add(t))));
            t += S::BYTES;
        }
        if full < bytes {
            let tail = bytes - full;
            let x = S::load_partial(ar.add(full), tail);
            step(&mut acc, x, rows.map(|r| S::load_partial(r.add(full), tail)));
        }
        for j in 0..NC {
            *out.add(j) = S::reduce32(acc[j]);
        }
    }

    /// Conventional kernel over row-major `A` (`m x k`) and `B` (`n x k`),
    /// both given as raw bytes with `elem` bytes per element.
    #[inline(always)]
    unsafe fn conv_all<S: Simd, const EXACT: bool, const U8: bool>(
        a: *const u8,
        b: *const u8,
        elem: usize,
        m: usize,
        n: usize,
        k: usize,
        c: &mut [i32],
    ) {
        let bytes = k * elem;
        let row = |j: usize| b.add(j * bytes);
        // panels of B rows sized to stay cache resident across all of A
        let panel = (CONV_PANEL_BYTES / bytes / NR * NR).max(NR);
        for jb in (0..n).step_by(panel) {
            let jend = (jb + panel).min(n);
            for i in 0..m {
                let ar = a.add(i * bytes);
                let out = c.as_mut_ptr().add(i * n);
                let mut j = jb;
                while j + NR <= jend {
                    conv_cols::<S, EXACT, U8, NR>(ar, [row(j), row(j + 1), row(j + 2), row(j + 3)], bytes, out.add(j));
                    j += NR;
                }
                while j < jend {
                    conv_cols::<S, EXACT, U8, 1>(ar, [row(j)], bytes, out.add(j));
                    j += 1;
                }
            }
        }
    }

    // ---- broadcast kernel: v outputs per register, no horizontal reduction ----

    /// Broadcast word for reduction step `k0 + s*h` of column `col`: the 4
    /// bytes of B at that position, zero-filled past `k_end`.
    #[inline(always)]
    unsafe fn b_word(row: *const u8, byte_off: usize, byte_end: usize) -> i32 {
        if byte_off + 4 <= byte_end {
            std::ptr::read_unaligned(row.add(byte_off).cast::<i32>())
        } else {
            let mut w = [0u8; 4];
            std::ptr::copy_nonoverlapping(row.add(byte_off), w.as_mut_ptr(), byte_end - byte_off);
            i32::from_le_bytes(w)
        }
    }

    /// One reduction step: packed block `x` against the broadcast words of
    /// `NC` input rows.
    #[inline(always)]
    unsafe fn ngemm_step<S: Simd, const EXACT: bool, const U8: bool, const NC: usize>(
        x: S::V,
        words: [i32; NC],
        acc: &mut [S::V; NC],
        acc_hi: &mut [S::V; NC],
    ) {
        if U8 && EXACT {
            let (xl, xh) = S::widen_u8(x);
            for j in 0..NC {
                let (y, _) = S::widen_i8(S::splat_i32(words[j]));
                acc[j] = S::add32(acc[j], S::madd16(xl, y));
                acc_hi[j] = S::add32(acc_hi[j], S::madd16(xh, y));
            }
        } else {
            let ones = S::ones16();
            for j in 0..NC {
                let y = S::splat_i32(words[j]);
                let e = if U8 { S::madd16(S::maddubs(x, y), ones) } else { S::madd16(x, y) };
                acc[j] = S::add32(acc[j], e);
            }
        }
    }

    /// `NC` output columns of one task. `elem` is the operand width in
    /// bytes; one reduction step covers 4 bytes of B (h elements) and one
    /// full register of packed A.
    #[inline(always)]
    unsafe fn ngemm_cols<S: Simd, const EXACT: bool, const U8: bool, const NC: usize>(
        a: *const u8,
        rows: [*const u8; NC],
        k0: usize,
        kend: usize,
        t: &Task,
        j0: usize,
        n: usize,
        c: &mut [i32],
    ) {
        let mut acc = [S::zero(); NC];
        let mut acc_hi = [S::zero(); NC];
        // all steps but a ragged last one read whole words
        let full = t.steps.min((kend - k0) / 4);
        for s in 0..full {
            let off = k0 + s * 4;
            let x = S::load(a.add(s * S::BYTES));
            ngemm_step::<S, EXACT, U8, NC>(x, rows.map(|r| std::ptr::read_unaligned(r.add(off).cast::<i32>())), &mut acc, &mut acc_hi);
        }
        for s in full..t.steps {
            let off = k0 + s * 4;
            let x = S::load(a.add(s * S::BYTES));
            ngemm_step::<S, EXACT, U8, NC>(x, rows.map(|r| b_word(r, off, kend)), &mut acc, &mut acc_hi);
        }
        if NC == 4 && !(U8 && EXACT) && t.rows == S::BYTES / 4 {
            let acc4 = &*acc.as_ptr().cast::<[S::V; 4]>();
            S::add_rows4(acc4, c.as_mut_ptr().add(t.m0 * n + j0), n);
            return;
        }
        let mut buf = [0i32; 16];
        let mut buf_hi = [0i32; 16];
        for j in 0..NC {
            S::store(acc[j], buf.as_mut_ptr().cast());
            if U8 && EXACT {
                // pair sums: rows [0, v/2) sit in the low half, the rest in the high half
                S::store(acc_hi[j], buf_hi.as_mut_ptr().cast());
                let half = S::BYTES / 8;
                for r in 0..t.rows {
                    let (src, i) = if r < half { (&buf, 2 * r) } else { (&buf_hi, 2 * (r - half)) };
                    let cell = c.get_unchecked_mut((t.m0 + r) * n + j0 + j);
                    *cell = cell.wrapping_add(src[i].wrapping_add(src[i + 1]));
                }
            } else {
                for r in 0..t.rows {
                    let cell = c.get_unchecked_mut((t.m0 + r) * n + j0 + j);
                    *cell = cell.wrapping_add(buf[r]);
                }
            }
        }
    }


    #[inline(always)]
    unsafe fn ngemm_task<S: Simd, const EXACT: bool, const U8: bool>(
        a: *const u8,
        b: *const u8,
        row_bytes: usize,
        elem: usize,
        t: &Task,
        n: usize,
        c: &mut [i32],
    ) {
        let a = a.add(t.a_off * elem);
        let (k0, kend) = (t.k0 * elem, t.k_end * elem);
        let row = |j: usize| b.add(j * row_bytes);
        let end = t.n0 + t.ncols;
        let mut j = t.n0;
        while j + NR <= end {
            ngemm_cols::<S, EXACT, U8, NR>(a, [row(j), row(j + 1), row(j + 2), row(j + 3)], k0, kend, t, j, n, c);
            j += NR;
        }
        match end - j {
            3 => ngemm_cols::<S, EXACT, U8, 3>(a, [row(j), row(j + 1), row(j + 2)], k0, kend, t, j, n, c),
            2 => ngemm_cols::<S, EXACT, U8, 2>(a, [row(j), row(j + 1)], k0, kend, t, j, n, c),
            1 => ngemm_cols::<S, EXACT, U8, 1>(a, [row(j)], k0, kend, t, j, n, c),
            _ => {}
        }
    }

    #[inline(always)]
    unsafe fn ngemm_all<S: Simd, const EXACT: bool, const U8: bool>(
        a: *const u8,
        b: *const u8,
        k: usize,
        elem: usize,
        tasks: &[Task],
        n: usize,
        c: &mut [i32],
    ) {
        for t in tasks {
            ngemm_task::<S, EXACT, U8>(a, b, k * elem, elem, t, n, c);
        }
    }

    macro_rules! entry_points {
        ($modname:ident, $simd:ty, $features:literal) => {
            mod $modname {
                use super::*;

                #[target_feature(enable = $features)]
                pub(super) unsafe fn madd_u8i8(a: &[u8], b: &[i8], mode: SatMode) -> LaneVec {
                    prim_madd_u8i8::<$simd>(a, b, mode)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn madd_i16(a: &[i16], b: &[i16]) -> LaneVec {
                    prim_madd_i16::<$simd>(a, b)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn tree_reduce(v: &[i32]) -> TreeSum {
                    prim_tree_reduce::<$simd>(v)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn broadcast(b: [i8; 4]) -> LaneVec {
                    prim_broadcast::<$simd>(b)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn conv_u8i8_sat(a: &[u8], b: &[i8], m: usize, n: usize, k: usize, c: &mut [i32]) {
                    conv_all::<$simd, false, true>(a.as_ptr(), b.as_ptr().cast(), 1, m, n, k, c)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn conv_u8i8_exact(a: &[u8], b: &[i8], m: usize, n: usize, k: usize, c: &mut [i32]) {
                    conv_all::<$simd, true, true>(a.as_ptr(), b.as_ptr().cast(), 1, m, n, k, c)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn conv_i16(a: &[i16], b: &[i16], m: usize, n: usize, k: usize, c: &mut [i32]) {
                    conv_all::<$simd, false, false>(a.as_ptr().cast(), b.as_ptr().cast(), 2, m, n, k, c)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn ngemm_u8i8_sat(a: *const u8, b: *const u8, k: usize, tasks: &[Task], n: usize, c: &mut [i32]) {
                    ngemm_all::<$simd, false, true>(a, b, k, 1, tasks, n, c)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn ngemm_u8i8_exact(a: *const u8, b: *const u8, k: usize, tasks: &[Task], n: usize, c: &mut [i32]) {
                    ngemm_all::<$simd, true, true>(a, b, k, 1, tasks, n, c)
                }

                #[target_feature(enable = $features)]
                pub(super) unsafe fn ngemm_i16(a: *const u8, b: *const u8, k: usize, tasks: &[Task], n: usize, c: &mut [i32]) {
                    ngemm_all::<$simd, false, false>(a, b, k, 2, tasks, n, c)
                }
            }
        };
    }

    entry_points!(avx2, Avx2, "avx2");
    entry_points!(avx512, Avx512, "avx2,avx512f,avx512bw");

    /// Conventional kernel over unpacked operands. `c` is `m x n`, zeroed.
    ///
    /// # Safety
    /// The host must support `isa`, and the operands must match `path`.
    pub(crate) unsafe fn conventional(isa: NativeIsa, path: GemmPath, a: &MatrixBuf, b: &MatrixBuf, mode: SatMode, c: &mut [i32]) {
        let (m, n, k) = (a.rows(), b.rows(), a.cols());
        match path {
            GemmPath::U8I8 => {
                let (a, b) = (a.as_slice::<u8>().unwrap(), b.as_slice::<i8>().unwrap());
                match mode {
                    SatMode::HardwareSaturating => with_isa!(isa, conv_u8i8_sat(a, b, m, n, k, c)),
                    SatMode::WideningExact => with_isa!(isa, conv_u8i8_exact(a, b, m, n, k, c)),
                }
            }
            GemmPath::I16 => {
                let (a, b) = (a.as_slice::<i16>().unwrap(), b.as_slice::<i16>().unwrap());
                with_isa!(isa, conv_i16(a, b, m, n, k, c))
            }
        }
    }

    /// Broadcast kernel over a packed weight and its task schedule.
    ///
    /// # Safety
    /// The host must support `isa`, `p` must have been packed for `isa`, and
    /// `b` must be `n x k_orig` of the matching kind.
    pub(crate) unsafe fn ngemm(isa: NativeIsa, p: &PackedWeight, b: &MatrixBuf, mode: SatMode, tasks: &[Task], c: &mut [i32]) {
        let path = p.shape().path();
        let n = b.rows();
        let (a_ptr, b_ptr) = match path {
            GemmPath::U8I8 => (
                p.as_slice::<u8>().unwrap().as_ptr(),
                b.as_slice::<i8>().unwrap().as_ptr().cast::<u8>(),
            ),
            GemmPath::I16 => (
                p.as_slice::<i16>().unwrap().as_ptr().cast::<u8>(),
                b.as_slice::<i16>().unwrap().as_ptr().cast::<u8>(),
            ),
        };
        let k = p.k_orig();
        match (path, mode) {
            (GemmPath::I16, _) => with_isa!(isa, ngemm_i16(a_ptr, b_ptr, k, tasks, n, c)),
            (GemmPath::U8I8, SatMode::HardwareSaturating) => with_isa!(isa, ngemm_u8i8_sat(a_ptr, b_ptr, k, tasks, n, c)),
            (GemmPath::U8I8, SatMode::WideningExact) => with_isa!(isa, ngemm_u8i8_exact(a_ptr, b_ptr, k, tasks, n, c)),
        }
    }
}
