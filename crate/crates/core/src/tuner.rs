//! Exhaustive tile-size and loop-order search for the broadcast kernel.
//!
//! Every candidate is packed, run on fixed-seed inputs, checked against the
//! reference result and timed; the config with the lowest median wins. Any
//! mismatch aborts tuning.
//!
//! Records persist in a plain text store, one record per line:
//!
//! ```text
//! <M>x<N>x<K>:<kind>:<isa> <tm>,<tn>,<tk>,<perm> <median_ns> <trials> <unix_seconds>
//! ```
//!
//! e.g. `256x256x1024:u8i8:v256 32,16,128,mnk 183211 5 1791072000`. Lines
//! starting with `#` are comments. The store is append-only; the last record
//! for a key wins.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::kernels::{gemm_ngemm, gemm_ref, SatMode};
use crate::layout::{kernel_shape, pack_weights, IsaProfile, KernelShape, PackedWeight, Permutation, TileConfig};
use crate::matrix::{mat_random, GemmPath, GemmProblem, MatrixBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuneSpace {
    pub alphas: Vec<usize>,
    pub betas: Vec<usize>,
    pub tns: Vec<usize>,
    pub permutations: Vec<Permutation>,
}

impl Default for TuneSpace {
    fn default() -> Self {
        TuneSpace {
            alphas: vec![1, 2, 4],
            betas: vec![1, 2, 4],
            tns: vec![1, 4, 16, 64],
            permutations: vec![Permutation::MNK, Permutation::MKN],
        }
    }
}

/// All configs of `space` that fit the problem, in a fixed order
/// (permutation, then beta, alpha, tn).
pub fn enumerate_space(space: &TuneSpace, shape: &KernelShape, problem: &GemmProblem) -> Result<Vec<TileConfig>> {
    if space.alphas.is_empty() || space.betas.is_empty() || space.tns.is_empty() || space.permutations.is_empty() {
        return Err(Error::config("tuning space has an empty axis"));
    }
    if [&space.alphas, &space.betas, &space.tns].iter().any(|axis| axis.contains(&0)) {
        return Err(Error::config("tuning candidates must be >= 1"));
    }
    let m_pad = problem.m.div_ceil(shape.v()) * shape.v();
    let k_pad = problem.k.div_ceil(shape.h()) * shape.h();
    let mut out = Vec::new();
    for &perm in &space.permutations {
        for &beta in &space.betas {
            for &alpha in &space.alphas {
                for &tn in &space.tns {
                    let cfg = TileConfig::from_multipliers(shape, alpha, beta, tn, perm);
                    if cfg.tm <= m_pad && cfg.tk <= k_pad && cfg.tn <= problem.n {
                        out.push(cfg);
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::config(format!(
            "no config in the space fits {}x{}x{}",
            problem.m, problem.n, problem.k
        )));
    }
    Ok(out)
}

/// Runs one timed trial of a candidate. Test code swaps in shims.
pub trait TrialRunner {
    fn run(&mut self, config: &TileConfig, packed: &PackedWeight, b: &MatrixBuf) -> Result<(MatrixBuf, Duration)>;
}

/// Times [`gemm_ngemm`] with a monotonic clock.
#[derive(Debug, Clone, Copy, Default)]
pub struct NgemmRunner {
    pub mode: SatMode,
}

impl TrialRunner for NgemmRunner {
    fn run(&mut self, _config: &TileConfig, packed: &PackedWeight, b: &MatrixBuf) -> Result<(MatrixBuf, Duration)> {
        let start = Instant::now();
        let c = gemm_ngemm(packed, b, self.mode)?;
        Ok((c, start.elapsed()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TuneOptions {
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            repeats: 5,
            warmup: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuneRecord {
    pub problem: GemmProblem,
    pub isa: IsaProfile,
    pub best: TileConfig,
    pub median_ns: u64,
    pub trials: usize,
    pub timestamp: u64,
}

/// Median of a non-empty sample (upper median for even counts).
pub fn median<T: Ord + Copy>(xs: &[T]) -> T {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v[v.len() / 2]
}

/// Fixed-seed operands for a problem. The `u8` weights stay in `[0, 127]`
/// so that no `u8 x i8` pair sum can saturate and every kernel mode agrees
/// with the exact reference.
pub fn tuning_inputs(problem: &GemmProblem, seed: u64) -> Result<(MatrixBuf, MatrixBuf)> {
    let path = problem.path()?;
    Ok(match path {
        GemmPath::U8I8 => (
            mat_random(problem.a_kind, problem.m, problem.k, seed, 0, 127)?,
            mat_random(problem.b_kind, problem.n, problem.k, seed ^ 0x5bd1_e995, -128, 127)?,
        ),
        GemmPath::I16 => (
            mat_random(problem.a_kind, problem.m, problem.k, seed, -32768, 32767)?,
            mat_random(problem.b_kind, problem.n, problem.k, seed ^ 0x5bd1_e995, -32768, 32767)?,
        ),
    })
}

pub fn tune(problem: &GemmProblem, space: &TuneSpace, isa: IsaProfile, repeats: usize, warmup: usize) -> Result<TuneRecord> {
    let opts = TuneOptions {
        repeats,
        warmup,
        ..TuneOptions::default()
    };
    tune_with(problem, space, isa, opts, &mut NgemmRunner::default())
}

pub fn tune_with(
    problem: &GemmProblem,
    space: &TuneSpace,
    isa: IsaProfile,
    opts: TuneOptions,
    runner: &mut dyn TrialRunner,
) -> Result<TuneRecord> {
    if opts.repeats < 3 {
        return Err(Error::Precondition(format!("repeats must be >= 3, got {}", opts.repeats)));
    }
    if opts.warmup < 1 {
        return Err(Error::Precondition("warmup must be >= 1".into()));
    }
    problem.validate()?;
    let shape = kernel_shape(isa, problem.a_kind)?;
    let configs = enumerate_space(space, &shape, problem)?;
    let (a, b) = tuning_inputs(problem, opts.seed)?;
    let expected = gemm_ref(&a, &b, problem)?;

    let mut best: Option<(TileConfig, u64)> = None;
    for cfg in configs {
        let packed = pack_weights(&a, shape, cfg)?;
        let mut times = Vec::with_capacity(opts.repeats);
        for trial in 0..opts.warmup + opts.repeats {
            let (c, elapsed) = runner.run(&cfg, &packed, &b)?;
            if c != expected {
                return Err(Error::Tune {
                    config: cfg.to_string(),
                    msg: "output does not match the reference GEMM".into(),
                });
            }
            if trial >= opts.warmup {
                times.push(elapsed.as_nanos().max(1) as u64);
            }
        }
        let med = median(&times);
        if best.is_none_or(|(_, t)| med < t) {
            best = Some((cfg, med));
        }
    }
    let (best, median_ns) = best.expect("space is non-empty");
    Ok(TuneRecord {
        problem: *problem,
        isa,
        best,
        median_ns,
        trials: opts.repeats,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    })
}

fn problem_key(problem: &GemmProblem, isa: IsaProfile) -> String {
    let path = problem.path().map_or("?", GemmPath::name);
    format!("{}x{}x{}:{}:{}", problem.m, problem.n, problem.k, path, isa)
}

impl fmt::Display for TuneRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            problem_key(&self.problem, self.isa),
            self.best,
            self.median_ns,
            self.trials,
            self.timestamp
        )
    }
}

impl std::str::FromStr for TuneRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::config(format!("bad tune record ({what}): {line:?}"));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [key, cfg, median_ns, trials, timestamp] = fields[..] else {
            return Err(bad("expected 5 fields"));
        };
        let key: Vec<&str> = key.split(':').collect();
        let [dims, path, isa] = key[..] else {
            return Err(bad("problem key"));
        };
        let dims: Vec<usize> = dims.split('x').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad("dims"))?;
        let [m, n, k] = dims[..] else {
            return Err(bad("dims"));
        };
        let path = GemmPath::parse(path).ok_or_else(|| bad("kind"))?;
        let isa: IsaProfile = isa.parse()?;
        let cfg: Vec<&str> = cfg.split(',').collect();
        let [tm, tn, tk, perm] = cfg[..] else {
            return Err(bad("config"));
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("config"));
        Ok(TuneRecord {
            problem: GemmProblem::for_path(path, m, n, k)?,
            isa,
            best: TileConfig::new(num(tm)?, num(tn)?, num(tk)?, perm.parse()?),
            median_ns: median_ns.parse().map_err(|_| bad("median"))?,
            trials: trials.parse().map_err(|_| bad("trials"))?,
            timestamp: timestamp.parse().map_err(|_| bad("timestamp"))?,
        })
    }
}

/// Append-only file of [`TuneRecord`]s.
#[derive(Debug, Clone)]
pub struct TuneStore {
    path: PathBuf,
}

impl TuneStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TuneStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &TuneRecord) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{record}")?;
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<TuneRecord>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect()
    }

    /// Latest record for the problem on `isa`.
    pub fn lookup(&self, problem: &GemmProblem, isa: IsaProfile) -> Result<Option<TuneRecord>> {
        let key = problem_key(problem, isa);
        Ok(self
            .records()?
            .into_iter()
            .rev()
            .find(|r| problem_key(&r.problem, r.isa) == key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::ElemKind;

    fn u8_problem(m: usize, n: usize, k: usize) -> GemmProblem {
        GemmProblem::new(m, n, k, ElemKind::U8, ElemKind::I8).unwrap()
    }

    fn v256() -> KernelShape {
        kernel_shape(IsaProfile::V256, ElemKind::U8).unwrap()
    }

    #[test]
    fn singleton_space() {
        let space = TuneSpace {
            alphas: vec![1],
            betas: vec![1],
            tns: vec![1],
            permutations: vec![Permutation::MNK],
        };
        let cfgs = enumerate_space(&space, &v256(), &u8_problem(32, 32, 32)).unwrap();
        assert_eq!(cfgs, vec![TileConfig::new(8, 1, 4, Permutation::MNK)]);
    }

    #[test]
    fn product_count_and_filter() {
        let space = TuneSpace {
            alphas: vec![1, 2],
            betas: vec![1, 2],
            tns: vec![4],
            permutations: vec![Permutation::MNK, Permutation::NMK],
        };
        assert_eq!(enumerate_space(&space, &v256(), &u8_problem(64, 64, 64)).unwrap().len(), 8);
        let small = enumerate_space(&space, &v256(), &u8_problem(8, 64, 64)).unwrap();
        assert_eq!(small.len(), 4);
        assert!(small.iter().all(|c| c.tm == 8));
    }

    #[test]
    fn empty_space_is_config_error() {
        let space = TuneSpace {
            tns: vec![64],
            ..TuneSpace::default()
        };
        assert!(matches!(
            enumerate_space(&space, &v256(), &u8_problem(8, 4, 8)),
            Err(Error::Config(_))
        ));
        let space = TuneSpace {
            alphas: vec![],
            ..TuneSpace::default()
        };
        assert!(enumerate_space(&space, &v256(), &u8_problem(8, 4, 8)).is_err());
    }

    #[test]
    fn repeats_precondition() {
        let p = u8_problem(8, 8, 8);
        assert!(matches!(
            tune(&p, &TuneSpace::default(), IsaProfile::V256, 1, 1),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            tune(&p, &TuneSpace::default(), IsaProfile::V256, 3, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn real_tuning_returns_member() {
        let p = u8_problem(24, 9, 40);
        let space = TuneSpace::default();
        let rec = tune(&p, &space, IsaProfile::V256, 3, 1).unwrap();
        let cfgs = enumerate_space(&space, &v256(), &p).unwrap();
        assert!(cfgs.contains(&rec.best));
        assert!(rec.median_ns > 0);
        assert_eq!(rec.trials, 3);
    }

    #[test]
    fn record_line_round_trip() {
        let rec = TuneRecord {
            problem: u8_problem(256, 256, 1024),
            isa: IsaProfile::V256,
            best: TileConfig::new(32, 16, 128, Permutation::MKN),
            median_ns: 183211,
            trials: 5,
            timestamp: 1791072000,
        };
        let line = rec.to_string();
        assert_eq!(line, "256x256x1024:u8i8:v256 32,16,128,mkn 183211 5 1791072000");
        assert_eq!(line.parse::<TuneRecord>().unwrap(), rec);
        assert!("256x256:u8i8:v256 32,16,128,mkn 1 5 1".parse::<TuneRecord>().is_err());
        assert!("256x256x1:u8i8:v256 32,16,128 1 5 1".parse::<TuneRecord>().is_err());
    }

    #[test]
    fn store_lookup_latest() {
        let dir = tempfile::tempdir().unwrap();
        let store = TuneStore::new(dir.path().join("tune.txt"));
        assert!(store.records().unwrap().is_empty());
        let p = u8_problem(64, 64, 64);
        let mut rec = TuneRecord {
            problem: p,
            isa: IsaProfile::V256,
            best: TileConfig::new(8, 1, 4, Permutation::MNK),
            median_ns: 10,
            trials: 3,
            timestamp: 1,
        };
        store.append(&rec).unwrap();
        rec.best = TileConfig::new(16, 4, 8, Permutation::MKN);
        store.append(&rec).unwrap();
        assert_eq!(store.lookup(&p, IsaProfile::V256).unwrap().unwrap().best, rec.best);
        assert!(store.lookup(&p, IsaProfile::V512).unwrap().is_none());
        assert_eq!(store.records().unwrap().len(), 2);
    }
}
