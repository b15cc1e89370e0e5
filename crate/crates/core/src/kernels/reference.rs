//! Scalar triple-loop oracles.

use crate::error::Result;
use crate::matrix::{Element, GemmPath, GemmProblem, MatrixBuf};

fn ref_typed<A: Element, B: Element>(a: &[A], b: &[B], p: &GemmProblem) -> Vec<i32> {
    let mut c = vec![0i32; p.m * p.n];
    for m in 0..p.m {
        let arow = &a[m * p.k..(m + 1) * p.k];
        for n in 0..p.n {
            let brow = &b[n * p.k..(n + 1) * p.k];
            let mut acc = 0i32;
            for k in 0..p.k {
                acc = acc.wrapping_add((arow[k].to_i64() * brow[k].to_i64()) as i32);
            }
            c[m * p.n + n] = acc;
        }
    }
    c
}

/// Exact widening GEMM: `C[m][n] = sum_k A[m][k] * B[n][k]` with wrapping
/// `i32` accumulation.
pub fn gemm_ref(a: &MatrixBuf, b: &MatrixBuf, problem: &GemmProblem) -> Result<MatrixBuf> {
    problem.check_operands(a, b)?;
    let c = match problem.path()? {
        GemmPath::U8I8 => ref_typed(a.expect_slice::<u8>()?, b.expect_slice::<i8>()?, problem),
        GemmPath::I16 => ref_typed(a.expect_slice::<i16>()?, b.expect_slice::<i16>()?, problem),
    };
    MatrixBuf::new(problem.m, problem.n, c)
}

/// Scalar model of the saturating kernels: every aligned pair of `u8 x i8`
/// products along `K` is summed and clamped to `i16` before the exact `i32`
/// accumulation. The 16-bit path has no saturating stage and matches
/// [`gemm_ref`].
pub fn gemm_ref_saturating(a: &MatrixBuf, b: &MatrixBuf, problem: &GemmProblem) -> Result<MatrixBuf> {
    problem.check_operands(a, b)?;
    if problem.path()? == GemmPath::I16 {
        return gemm_ref(a, b, problem);
    }
    let (av, bv) = (a.expect_slice::<u8>()?, b.expect_slice::<i8>()?);
    let k = problem.k;
    let mut c = vec![0i32; problem.m * problem.n];
    for m in 0..problem.m {
        let arow = &av[m * k..(m + 1) * k];
        for n in 0..problem.n {
            let brow = &bv[n * k..(n + 1) * k];
            let mut acc = 0i32;
            for t in (0..k).step_by(2) {
                let mut pair = arow[t] as i32 * brow[t] as i32;
                if t + 1 < k {
                    pair += arow[t + 1] as i32 * brow[t + 1] as i32;
                }
                acc = acc.wrapping_add(pair.clamp(i16::MIN as i32, i16::MAX as i32));
            }
            c[m * problem.n + n] = acc;
        }
    }
    MatrixBuf::new(problem.m, problem.n, c)
}
