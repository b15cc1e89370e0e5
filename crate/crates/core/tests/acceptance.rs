//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runs without the libtest harness so criteria run in
//! order and the timing criterion never overlaps other work.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ngemm::bench::{self, BenchConfig};
use ngemm::kernels::{self, native, Backend, LaneVec, NativeIsa};
use ngemm::layout::Permutation;
use ngemm::rng::Xorshift64Star;
use ngemm::tuner::{enumerate_space, tune_with, NgemmRunner, TrialRunner, TuneOptions};
use ngemm::{
    fit_constants, gemm_ref, gemm_ref_saturating, inner_offset, kernel_shape, latency_conventional, latency_ngemm,
    mat_random, pack_weights, speedup_ratio, unpack_weights, CostParams, ElemKind, Error, FitSample, GemmPath,
    GemmProblem, IsaProfile, KernelShape, MatrixBuf, PackedWeight, ProblemPoint, SatMode, TileConfig, TuneSpace,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn backends(isa: IsaProfile) -> Vec<Backend> {
    let mut v = vec![Backend::Emulated];
    if let Some(n) = NativeIsa::for_profile(isa).filter(|n| n.is_available()) {
        v.push(Backend::Native(n));
    }
    v
}

fn native_isas() -> Vec<NativeIsa> {
    [NativeIsa::Avx2, NativeIsa::Avx512]
        .into_iter()
        .filter(|n| n.is_available())
        .collect()
}

fn random_tile(rng: &mut Xorshift64Star, shape: &KernelShape) -> TileConfig {
    let alpha = 1 + rng.below(8) as usize;
    let beta = 1 + rng.below(4) as usize;
    let tn = 1 + rng.below(20) as usize;
    let perm = Permutation::ALL[rng.below(6) as usize];
    TileConfig::from_multipliers(shape, alpha, beta, tn, perm)
}

fn full_range(kind: ElemKind, rows: usize, cols: usize, seed: u64) -> MatrixBuf {
    let (lo, hi) = kind.range();
    mat_random(kind, rows, cols, seed, lo, hi).unwrap()
}

/// 1. Both kernels in exact mode equal the reference on random problems.
fn oracle_equivalence() -> Outcome {
    let mut rng = Xorshift64Star::new(2024);
    let (mut problems, mut tails, mut runs) = (0, 0, 0);
    for case in 0..1000u64 {
        let isa = IsaProfile::ALL[case as usize % 3];
        let (m, n, k) = (
            1 + rng.below(64) as usize,
            1 + rng.below(64) as usize,
            1 + rng.below(64) as usize,
        );
        let mut tail = false;
        for path in [GemmPath::U8I8, GemmPath::I16] {
            let shape = kernel_shape(isa, path.a_kind()).unwrap();
            tail |= m % shape.v() != 0 || k % shape.h() != 0 || k % shape.w() != 0;
            let problem = GemmProblem::for_path(path, m, n, k).unwrap();
            let a = full_range(path.a_kind(), m, k, rng.next_u64());
            let b = full_range(path.b_kind(), n, k, rng.next_u64());
            let want = gemm_ref(&a, &b, &problem).unwrap();
            let packed = pack_weights(&a, shape, random_tile(&mut rng, &shape)).unwrap();
            for be in backends(isa) {
                let conv = kernels::gemm_conventional_with(&a, &b, &shape, SatMode::WideningExact, be).unwrap();
                let ng = kernels::gemm_ngemm_with(&packed, &b, SatMode::WideningExact, be).unwrap();
                ensure!(conv == want, "conventional {m}x{n}x{k} {path} {isa} {be:?} differs");
                ensure!(ng == want, "ngemm {m}x{n}x{k} {path} {isa} {be:?} tile {} differs", packed.tile());
                runs += 2;
            }
        }
        problems += 1;
        tails += tail as usize;
    }
    ensure!(tails >= 200, "only {tails} tail cases");
    Ok(format!("{problems} problems x 2 paths, {tails} with ragged dims, {runs} kernel runs bit-exact"))
}

/// 2. Saturating kernels equal the saturating oracle on adversarial inputs.
fn saturation_fidelity() -> Outcome {
    let mut rng = Xorshift64Star::new(7);
    let mut saturated = 0;
    for case in 0..100 {
        let isa = [IsaProfile::V256, IsaProfile::V512, IsaProfile::Scalar][case % 3];
        let (m, n, k) = (
            1 + rng.below(40) as usize,
            1 + rng.below(24) as usize,
            1 + rng.below(130) as usize,
        );
        let a = MatrixBuf::new(m, k, vec![255u8; m * k]).unwrap();
        let bv: Vec<i8> = (0..n * k).map(|_| if rng.below(2) == 0 { 127 } else { -128 }).collect();
        let b = MatrixBuf::new(n, k, bv).unwrap();
        let problem = GemmProblem::from_operands(&a, &b).unwrap();
        let want = gemm_ref_saturating(&a, &b, &problem).unwrap();
        saturated += (want != gemm_ref(&a, &b, &problem).unwrap()) as usize;
        let shape = kernel_shape(isa, ElemKind::U8).unwrap();
        let packed = pack_weights(&a, shape, random_tile(&mut rng, &shape)).unwrap();
        for be in backends(isa) {
            let conv = kernels::gemm_conventional_with(&a, &b, &shape, SatMode::HardwareSaturating, be).unwrap();
            let ng = kernels::gemm_ngemm_with(&packed, &b, SatMode::HardwareSaturating, be).unwrap();
            ensure!(conv == want, "conventional case {case} {isa} {be:?}");
            ensure!(ng == want, "ngemm case {case} {isa} {be:?}");
        }
    }
    ensure!(saturated > 50, "only {saturated} cases actually saturate");
    Ok(format!("100 cases ({saturated} where saturation changes C) bit-exact"))
}

/// 3. Shape table, inner-offset bijection, pack/unpack round trip.
fn layout_suite() -> Outcome {
    let table = [
        (IsaProfile::V256, ElemKind::U8, (32, 4, 8)),
        (IsaProfile::V256, ElemKind::I16, (16, 2, 8)),
        (IsaProfile::V512, ElemKind::U8, (64, 4, 16)),
        (IsaProfile::V512, ElemKind::I16, (32, 2, 16)),
    ];
    for (isa, kind, whv) in table {
        let s = kernel_shape(isa, kind).unwrap();
        ensure!((s.w(), s.h(), s.v()) == whv, "{isa} {kind}: got {:?}", (s.w(), s.h(), s.v()));
    }
    for (isa, kind, _) in table {
        let s = kernel_shape(isa, kind).unwrap();
        let mut seen = vec![false; s.w()];
        for m in 0..s.v() {
            for k in 0..s.h() {
                let o = inner_offset(m, k, &s).unwrap();
                ensure!(o == m * s.h() + k && !seen[o], "inner_offset({m},{k}) = {o}");
                seen[o] = true;
            }
        }
        ensure!(seen.iter().all(|&x| x), "inner_offset not onto for {isa} {kind}");
        ensure!(inner_offset(s.v(), 0, &s).is_err() && inner_offset(0, s.h(), &s).is_err(), "bounds");
    }

    let mut packs = 0;
    for isa in IsaProfile::ALL {
        for kind in [ElemKind::U8, ElemKind::I16] {
            let s = kernel_shape(isa, kind).unwrap();
            let (tm, tk) = (2 * s.v(), 2 * s.h());
            for (i, perm) in [Permutation::MNK, Permutation::KNM].into_iter().enumerate() {
                let tile = TileConfig::new(tm, 3, tk, perm);
                for m in 1..=3 * tm {
                    for k in 1..=3 * tk {
                        let a = full_range(kind, m, k, (m * 1000 + k + i) as u64);
                        let p = pack_weights(&a, s, tile).unwrap();
                        ensure!(p.m_pad() == m.div_ceil(tm) * tm && p.k_pad() == k.div_ceil(tk) * tk, "pad dims {m}x{k}");
                        p.verify_padding().map_err(|e| e.to_string())?;
                        ensure!(unpack_weights(&p).unwrap() == a, "round trip {isa} {kind} {m}x{k} {perm}");
                        packs += 1;
                    }
                }
            }
        }
    }
    Ok(format!("4 shape rows, 4 bijections, {packs} pack/unpack round trips"))
}

/// 4. Latency model identities, monotonicity and fit round trip.
fn latency_identities() -> Outcome {
    let mut rng = Xorshift64Star::new(99);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let w = [16u32, 32, 64][rng.below(3) as usize];
        let p = ProblemPoint::new(1 + rng.below(4096), 1 + rng.below(8192), w).unwrap();
        let c = CostParams::new(0.01 + 10.0 * rng.unit_f64(), 0.01 + 10.0 * rng.unit_f64()).unwrap();
        let (lhs, rhs) = (speedup_ratio(&p, &c) * latency_ngemm(&p, &c), latency_conventional(&p, &c));
        let rel = (lhs - rhs).abs() / rhs;
        worst = worst.max(rel);
        ensure!(rel <= 1e-12, "identity off by {rel:e} at {p:?}");
    }
    let c = CostParams::new(1.5, 2.0).unwrap();
    for w in [16u32, 32, 64] {
        let mut prev = f64::INFINITY;
        for l in 1..=300 {
            let r = speedup_ratio(&ProblemPoint::with_steps(64, w, l).unwrap(), &c);
            ensure!(r < prev, "not decreasing in l at w={w}, l={l}");
            prev = r;
        }
    }
    for l in 1..=300 {
        let r = |w| speedup_ratio(&ProblemPoint::with_steps(64, w, l).unwrap(), &c);
        ensure!(r(16) < r(32) && r(32) < r(64), "not increasing in w at l={l}");
    }
    let (c1, c2) = (0.75, 3.25);
    let truth = CostParams::new(c1, c2).unwrap();
    let mut samples = Vec::new();
    for w in [32u32, 64] {
        for l in [1, 2, 3, 5, 8, 13, 21] {
            for m in [16u64, 256, 4096] {
                let point = ProblemPoint::with_steps(m, w, l).unwrap();
                samples.push(FitSample {
                    point,
                    conventional: latency_conventional(&point, &truth),
                    ngemm: latency_ngemm(&point, &truth),
                });
            }
        }
    }
    let fit = fit_constants(&samples).unwrap();
    let (e1, e2) = ((fit.params.c1() - c1).abs() / c1, (fit.params.c2() - c2).abs() / c2);
    ensure!(e1 <= 1e-9 && e2 <= 1e-9, "fit errors c1 {e1:e}, c2 {e2:e}");
    Ok(format!("identity worst rel err {worst:.1e}; monotone on grid; fit rel err c1 {e1:.1e}, c2 {e2:.1e}"))
}

/// 5. Broadcast kernel beats the conventional one over the default sweep,
/// more so at short reductions.
fn performance_direction() -> Outcome {
    if !NativeIsa::Avx2.is_available() || !Backend::select(IsaProfile::V256).is_native() {
        return Err("no native V256 path on this host (or FORCE_ISA disables it)".into());
    }
    let cfg = BenchConfig {
        repeats: 101,
        warmup: 10,
        ..BenchConfig::new(IsaProfile::V256)
    };
    let report = bench::run_bench(&cfg).map_err(|e| e.to_string())?;
    let csv = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_bench.csv");
    bench::write_csv(std::fs::File::create(&csv).map_err(|e| e.to_string())?, &report).map_err(|e| e.to_string())?;
    let speedups = bench::speedups(&report.rows);
    let geo_at = |k: usize| {
        let v: Vec<f64> = speedups.iter().filter(|(key, _)| key.2 == k).map(|(_, s)| s.ln()).collect();
        (v.iter().sum::<f64>() / v.len() as f64).exp()
    };
    let (s128, s1024) = (geo_at(128), geo_at(1024));
    let detail = format!(
        "geomean {:.3}, K=128 {:.3}, K=1024 {:.3} (csv: {})",
        report.geomean_speedup,
        s128,
        s1024,
        csv.display()
    );
    ensure!(report.geomean_speedup > 1.0, "geomean not above 1: {detail}");
    ensure!(s128 > s1024, "K=128 speedup not above K=1024: {detail}");
    Ok(detail)
}

/// 6. Tree reduction takes log2(lanes) steps.
fn tree_steps() -> Outcome {
    let mut rng = Xorshift64Star::new(5);
    for lanes in [4usize, 8, 16] {
        let v: Vec<i32> = (0..lanes).map(|_| rng.next_u64() as i32).collect();
        let want = v.iter().fold(0i32, |a, &x| a.wrapping_add(x));
        let lv = LaneVec::new(v);
        kernels::reset_primitive_counts();
        let t = kernels::tree_reduce_i32(&lv).unwrap();
        ensure!(kernels::primitive_counts().tree_reduce_i32 == 1, "reduction not counted");
        ensure!(t.steps == lanes.trailing_zeros() && t.value == want, "emulated {lanes}: {t:?}");
        for isa in native_isas() {
            if let Some(t) = native::tree_reduce_i32(isa, &lv) {
                ensure!(t.steps == lanes.trailing_zeros() && t.value == want, "native {isa:?} {lanes}: {t:?}");
            }
        }
    }
    Ok("steps 2, 3, 4 for 4, 8, 16 lanes".into())
}

struct Slowed {
    target: TileConfig,
    delay: Duration,
}

impl TrialRunner for Slowed {
    fn run(&mut self, cfg: &TileConfig, p: &PackedWeight, b: &MatrixBuf) -> ngemm::Result<(MatrixBuf, Duration)> {
        if *cfg == self.target {
            std::thread::sleep(self.delay);
        }
        NgemmRunner::default().run(cfg, p, b)
    }
}

struct Miscompute {
    target: TileConfig,
}

impl TrialRunner for Miscompute {
    fn run(&mut self, cfg: &TileConfig, p: &PackedWeight, b: &MatrixBuf) -> ngemm::Result<(MatrixBuf, Duration)> {
        let (c, t) = NgemmRunner::default().run(cfg, p, b)?;
        if *cfg != self.target {
            return Ok((c, t));
        }
        let mut v = c.as_slice::<i32>().unwrap().to_vec();
        v[0] = v[0].wrapping_add(1);
        Ok((MatrixBuf::new(c.rows(), c.cols(), v)?, t))
    }
}

/// Deterministic timings derived from the config alone.
struct FakeClock;

impl TrialRunner for FakeClock {
    fn run(&mut self, cfg: &TileConfig, p: &PackedWeight, b: &MatrixBuf) -> ngemm::Result<(MatrixBuf, Duration)> {
        let (c, _) = NgemmRunner::default().run(cfg, p, b)?;
        let ns = 1000 + (cfg.tm * 7 + cfg.tn * 13 + cfg.tk * 3) % 97;
        Ok((c, Duration::from_nanos(ns as u64)))
    }
}

/// 7. Slowed configs lose, miscomputing configs abort tuning.
fn tuner_safety() -> Outcome {
    let problem = GemmProblem::for_path(GemmPath::U8I8, 64, 32, 128).unwrap();
    let space = TuneSpace::default();
    let isa = IsaProfile::V256;
    let shape = kernel_shape(isa, ElemKind::U8).unwrap();
    let configs = enumerate_space(&space, &shape, &problem).unwrap();
    let opts = TuneOptions {
        repeats: 3,
        warmup: 1,
        seed: 11,
    };

    let fair = tune_with(&problem, &space, isa, opts, &mut NgemmRunner::default()).unwrap();
    let mut targets = vec![fair.best];
    targets.extend(configs.iter().step_by(9).copied());
    for target in &targets {
        let mut runner = Slowed {
            target: *target,
            delay: Duration::from_millis(3),
        };
        let rec = tune_with(&problem, &space, isa, opts, &mut runner).unwrap();
        ensure!(rec.best != *target, "slowed config {target} was selected");
    }

    for target in [configs[0], configs[configs.len() / 2], *configs.last().unwrap()] {
        match tune_with(&problem, &space, isa, opts, &mut Miscompute { target }) {
            Err(Error::Tune { config, .. }) => ensure!(config == target.to_string(), "wrong config named: {config}"),
            other => return Err(format!("miscompute on {target} not caught: {other:?}")),
        }
    }

    let a = tune_with(&problem, &space, isa, opts, &mut FakeClock).unwrap();
    let b = tune_with(&problem, &space, isa, opts, &mut FakeClock).unwrap();
    ensure!(a.best == b.best && a.median_ns == b.median_ns, "deterministic clock gave different winners");
    Ok(format!(
        "{} slowed configs never chosen, 3 miscomputing configs aborted, {} candidates",
        targets.len(),
        configs.len()
    ))
}

/// 8. Native primitives agree with the lane emulation.
fn emulation_agreement() -> Outcome {
    let isas = native_isas();
    if isas.is_empty() {
        return Err("no native path on this host".into());
    }
    const N: usize = 1_000_000;
    let mut rng = Xorshift64Star::new(8);
    let bytes = |n: usize, rng: &mut Xorshift64Star| -> Vec<u8> {
        let mut v = Vec::with_capacity(n);
        while v.len() < n {
            v.extend_from_slice(&rng.next_u64().to_le_bytes());
        }
        v.truncate(n);
        v
    };
    for &isa in &isas {
        let width = isa.profile().vector_bits() as usize / 8;
        for i in 0..N {
            let raw = bytes(2 * width, &mut rng);
            let a = LaneVec::new(raw[..width].to_vec());
            let b = LaneVec::new(raw[width..].iter().map(|&x| x as i8).collect::<Vec<_>>());
            let mode = if i % 2 == 0 { SatMode::HardwareSaturating } else { SatMode::WideningExact };
            ensure!(
                native::madd_u8i8(isa, &a, &b, mode).unwrap() == kernels::madd_u8i8(&a, &b, mode).unwrap(),
                "madd_u8i8 {isa:?} {mode:?} case {i}"
            );

            let to16 = |s: &[u8]| s.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect::<Vec<_>>();
            let (x, y) = (LaneVec::new(to16(&raw[..width])), LaneVec::new(to16(&raw[width..])));
            ensure!(
                native::madd_i16(isa, &x, &y).unwrap() == kernels::madd_i16(&x, &y).unwrap(),
                "madd_i16 {isa:?} case {i}"
            );

            let lanes: Vec<i32> = raw[..width]
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let lv = LaneVec::new(lanes);
            ensure!(
                native::tree_reduce_i32(isa, &lv).unwrap() == kernels::tree_reduce_i32(&lv).unwrap(),
                "tree_reduce_i32 {isa:?} case {i}"
            );

            let block = [raw[0] as i8, raw[1] as i8, raw[2] as i8, raw[3] as i8];
            ensure!(
                native::broadcast_i8x4(isa, block).unwrap() == kernels::broadcast_block(&block, width).unwrap(),
                "broadcast {isa:?} case {i}"
            );
        }
        // the one wrapping case of the 16-bit multiply-add
        let min = LaneVec::new(vec![i16::MIN; width / 2]);
        ensure!(
            native::madd_i16(isa, &min, &min).unwrap() == kernels::madd_i16(&min, &min).unwrap(),
            "madd_i16 {isa:?} overflow"
        );
    }
    Ok(format!("{N} random invocations x 4 primitives on {isas:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("saturation fidelity", saturation_fidelity),
        ("layout suite", layout_suite),
        ("latency-model identities", latency_identities),
        ("performance direction", performance_direction),
        ("tree reduction steps", tree_steps),
        ("tuner safety", tuner_safety),
        ("emulation/native agreement", emulation_agreement),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}) [{secs:.1}s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}) [{secs:.1}s]: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
