//! Size-sweep benchmark and model report.
//!
//! Each (size, kind) pair is verified against the oracle for the selected
//! [`SatMode`] before any timing; a mismatch aborts the sweep. Results go to a
//! CSV with the fixed header
//!
//! ```text
//! m,n,k,kind,isa,variant,median_ns,min_ns,trials,checksum
//! ```
//!
//! followed by one `# geomean_speedup,<x>` comment line.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gemm_conventional, gemm_ngemm, gemm_ref, gemm_ref_saturating, SatMode, Variant};
use crate::latency::{fit_constants, speedup_ratio, FitReport, FitSample, ProblemPoint};
use crate::layout::{kernel_shape, pack_weights, IsaProfile, TileConfig};
use crate::matrix::{mat_random, GemmPath, GemmProblem, MatrixBuf};
use crate::tuner::median;

pub const CSV_HEADER: &str = "m,n,k,kind,isa,variant,median_ns,min_ns,trials,checksum";
pub const GEOMEAN_TAG: &str = "# geomean_speedup";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRow {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub kind: String,
    pub isa: String,
    pub variant: String,
    pub median_ns: u64,
    pub min_ns: u64,
    pub trials: usize,
    pub checksum: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub median_ns: u64,
    pub min_ns: u64,
    pub trials: usize,
}

/// Runs `f` `warmup` times untimed, then `repeats` times timed.
pub fn time_runs<T>(repeats: usize, warmup: usize, mut f: impl FnMut() -> Result<T>) -> Result<(Timing, T)> {
    if repeats == 0 {
        return Err(Error::Precondition("repeats must be >= 1".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let out = f()?;
        times.push((start.elapsed().as_nanos() as u64).max(1));
        last = Some(out);
    }
    let timing = Timing {
        median_ns: median(&times),
        min_ns: *times.iter().min().expect("repeats >= 1"),
        trials: repeats,
    };
    Ok((timing, last.expect("repeats >= 1")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<(usize, usize, usize)>,
    pub paths: Vec<GemmPath>,
    pub isa: IsaProfile,
    pub mode: SatMode,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Tile for the packed weight; the shape's default when `None`.
    pub tile: Option<TileConfig>,
}

impl BenchConfig {
    pub fn new(isa: IsaProfile) -> Self {
        BenchConfig {
            sizes: default_sizes(),
            paths: vec![GemmPath::U8I8, GemmPath::I16],
            isa,
            mode: SatMode::default(),
            repeats: 5,
            warmup: 2,
            seed: 1,
            tile: None,
        }
    }
}

/// M = N in {64, 256}, K in {128, 256, 512, 1024}.
pub fn default_sizes() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for mn in [64, 256] {
        for k in [128, 256, 512, 1024] {
            out.push((mn, mn, k));
        }
    }
    out
}

/// Parses `MxNxK[,MxNxK...]`.
pub fn parse_sizes(spec: &str) -> Result<Vec<(usize, usize, usize)>> {
    let bad = |s: &str| Error::config(format!("bad size '{s}', expected MxNxK"));
    let sizes = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let dims: Vec<usize> = s
                .split(['x', 'X'])
                .map(|d| d.parse().map_err(|_| bad(s)))
                .collect::<Result<_>>()?;
            match dims[..] {
                [m, n, k] if m > 0 && n > 0 && k > 0 => Ok((m, n, k)),
                _ => Err(bad(s)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if sizes.is_empty() {
        return Err(Error::config("empty size list"));
    }
    Ok(sizes)
}

/// Operands for one benchmark problem, drawn over the full element ranges.
pub fn bench_inputs(problem: &GemmProblem, seed: u64) -> Result<(MatrixBuf, MatrixBuf)> {
    let a_range = problem.a_kind.range();
    let b_range = problem.b_kind.range();
    Ok((
        mat_random(problem.a_kind, problem.m, problem.k, seed, a_range.0, a_range.1)?,
        mat_random(problem.b_kind, problem.n, problem.k, seed.wrapping_add(1), b_range.0, b_range.1)?,
    ))
}

/// Result the kernels must reproduce under `mode`.
pub fn oracle(a: &MatrixBuf, b: &MatrixBuf, problem: &GemmProblem, mode: SatMode) -> Result<MatrixBuf> {
    match mode {
        SatMode::HardwareSaturating => gemm_ref_saturating(a, b, problem),
        SatMode::WideningExact => gemm_ref(a, b, problem),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Geometric mean over all problems of conventional / ngemm median time.
    pub geomean_speedup: f64,
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for &path in &cfg.paths {
        let shape = kernel_shape(cfg.isa, path.a_kind())?;
        let tile = cfg.tile.unwrap_or_else(|| TileConfig::default_for(&shape));
        for &(m, n, k) in &cfg.sizes {
            let problem = GemmProblem::for_path(path, m, n, k)?;
            let (a, b) = bench_inputs(&problem, cfg.seed)?;
            let expected = oracle(&a, &b, &problem, cfg.mode)?;
            let packed = pack_weights(&a, shape, tile)?;
            let label = format!("{m}x{n}x{k} {path}");

            let check = |variant: Variant, c: &MatrixBuf| {
                if *c == expected {
                    Ok(())
                } else {
                    Err(Error::Verification {
                        what: format!("{label} {variant}"),
                        msg: "output differs from the oracle".into(),
                    })
                }
            };
            check(Variant::Conventional, &gemm_conventional(&a, &b, &shape, cfg.mode)?)?;
            check(Variant::Ngemm, &gemm_ngemm(&packed, &b, cfg.mode)?)?;

            let (t_conv, c_conv) = time_runs(cfg.repeats, cfg.warmup, || gemm_conventional(&a, &b, &shape, cfg.mode))?;
            let (t_ng, c_ng) = time_runs(cfg.repeats, cfg.warmup, || gemm_ngemm(&packed, &b, cfg.mode))?;
            check(Variant::Conventional, &c_conv)?;
            check(Variant::Ngemm, &c_ng)?;

            for (variant, t, c) in [(Variant::Conventional, t_conv, c_conv), (Variant::Ngemm, t_ng, c_ng)] {
                rows.push(BenchRow {
                    m,
                    n,
                    k,
                    kind: path.name().to_string(),
                    isa: cfg.isa.name().to_string(),
                    variant: variant.name().to_string(),
                    median_ns: t.median_ns,
                    min_ns: t.min_ns,
                    trials: t.trials,
                    checksum: c.checksum(),
                });
            }
        }
    }
    let geomean_speedup = geomean_speedup(&rows)?;
    Ok(BenchReport { rows, geomean_speedup })
}

type SizeKey = (usize, usize, usize, String, String);

/// Conventional / ngemm median ratio for each problem that has both rows,
/// in first-appearance order.
pub fn speedups(rows: &[BenchRow]) -> Vec<(SizeKey, f64)> {
    let mut order: Vec<SizeKey> = Vec::new();
    let mut pairs: BTreeMap<SizeKey, (Option<u64>, Option<u64>)> = BTreeMap::new();
    for r in rows {
        let key = (r.m, r.n, r.k, r.kind.clone(), r.isa.clone());
        let entry = pairs.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (None, None)
        });
        match Variant::parse(&r.variant) {
            Some(Variant::Conventional) => entry.0 = Some(r.median_ns),
            Some(Variant::Ngemm) => entry.1 = Some(r.median_ns),
            _ => {}
        }
    }
    order
        .into_iter()
        .filter_map(|key| match pairs[&key] {
            (Some(c), Some(n)) => Some((key, c as f64 / n as f64)),
            _ => None,
        })
        .collect()
}

pub fn geomean_speedup(rows: &[BenchRow]) -> Result<f64> {
    let s = speedups(rows);
    if s.is_empty() {
        return Err(Error::config("no problem has both conventional and ngemm rows"));
    }
    Ok((s.iter().map(|(_, r)| r.ln()).sum::<f64>() / s.len() as f64).exp())
}

pub fn write_csv<W: Write>(out: W, report: &BenchReport) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for r in &report.rows {
        w.serialize(r)?;
    }
    let mut out = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    writeln!(out, "{GEOMEAN_TAG},{:.6}", report.geomean_speedup)?;
    Ok(())
}

/// Reads bench rows, skipping `#` lines. The header must match exactly.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::config(format!("unexpected CSV header '{header}'")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub kind: String,
    pub isa: String,
    pub l: u64,
    pub measured: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub fit: FitReport,
    pub rows: Vec<ModelRow>,
}

/// Fits the latency model to bench rows. Each problem contributes one
/// sample with `M * N` outputs and the vector width of its kind and ISA.
pub fn model_from_rows(rows: &[BenchRow]) -> Result<ModelReport> {
    let mut samples = Vec::new();
    let mut keys = Vec::new();
    for ((m, n, k, kind, isa), _) in speedups(rows) {
        let path = GemmPath::parse(&kind).ok_or_else(|| Error::config(format!("unknown kind '{kind}'")))?;
        let shape = kernel_shape(isa.parse()?, path.a_kind())?;
        let point = ProblemPoint::new((m * n) as u64, k as u64, shape.w() as u32)?;
        let time = |variant: Variant| {
            rows.iter()
                .find(|r| (r.m, r.n, r.k) == (m, n, k) && r.kind == kind && r.isa == isa && r.variant == variant.name())
                .map(|r| r.median_ns as f64)
                .expect("speedups only yields complete pairs")
        };
        samples.push(FitSample {
            point,
            conventional: time(Variant::Conventional),
            ngemm: time(Variant::Ngemm),
        });
        keys.push((m, n, k, kind, isa));
    }
    let fit = fit_constants(&samples)?;
    let rows = keys
        .into_iter()
        .zip(&samples)
        .map(|((m, n, k, kind, isa), s)| ModelRow {
            m,
            n,
            k,
            kind,
            isa,
            l: s.point.l,
            measured: s.conventional / s.ngemm,
            predicted: speedup_ratio(&s.point, &fit.params),
        })
        .collect();
    Ok(ModelReport { fit, rows })
}

pub fn write_model_report<W: Write>(mut out: W, report: &ModelReport) -> Result<()> {
    let f = &report.fit;
    writeln!(out, "c1,{:.6}", f.params.c1())?;
    writeln!(out, "c2,{:.6}", f.params.c2())?;
    writeln!(out, "c3,{:.6}", f.params.c3())?;
    writeln!(out, "r2_ngemm,{:.9}", f.r2_ngemm)?;
    writeln!(out, "r2_conventional,{:.9}", f.r2_conventional)?;
    if let Some(c2) = f.c2_conventional {
        writeln!(out, "c2_conventional,{c2:.6}")?;
    }
    writeln!(out, "samples,{}", f.samples)?;
    writeln!(out)?;
    writeln!(out, "m,n,k,kind,isa,l,measured_speedup,predicted_speedup")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.4},{:.4}",
            r.m, r.n, r.k, r.kind, r.isa, r.l, r.measured, r.predicted
        )?;
    }
    Ok(())
}
