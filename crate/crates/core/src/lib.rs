//! Low-precision integer GEMM with two reduction strategies.
//!
//! The conventional kernel reduces each output with a horizontal tree sum;
//! the broadcast kernel (`ngemm`) packs the weight matrix so each vector lane
//! accumulates one output directly. Around the kernels sit the packed weight
//! layout, an analytical latency model, a tile-size tuner and a benchmark
//! harness.

pub mod bench;
pub mod error;
pub mod io;
pub mod kernels;
pub mod latency;
pub mod layout;
pub mod matrix;
pub mod rng;
pub mod tuner;

pub use error::{Error, Result};
pub use kernels::{
    gemm_conventional, gemm_i16, gemm_ngemm, gemm_ref, gemm_ref_saturating, Backend, SatMode, Variant,
};
pub use layout::{
    inner_offset, kernel_shape, pack_weights, unpack_weights, IsaProfile, KernelShape, PackedWeight, Permutation,
    TileConfig,
};
pub use latency::{
    fit_constants, latency_conventional, latency_ngemm, speedup_ratio, CostParams, FitReport, FitSample, ProblemPoint,
};
pub use matrix::{mat_random, ElemKind, GemmPath, GemmProblem, MatrixBuf};
pub use tuner::{enumerate_space, tune, TuneRecord, TuneSpace, TuneStore};
