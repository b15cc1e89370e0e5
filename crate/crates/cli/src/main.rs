use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ngemm::bench::{self, BenchConfig};
use ngemm::io::{mat_read, mat_write, packed_write, read_any, AnyMatrixFile};
use ngemm::kernels::host_isa;
use ngemm::tuner::{tune_with, NgemmRunner, TuneOptions};
use ngemm::{
    gemm_conventional, gemm_ngemm, gemm_ref, kernel_shape, mat_random, pack_weights, ElemKind, Error, GemmPath,
    GemmProblem, IsaProfile, KernelShape, PackedWeight, Permutation, SatMode, TileConfig, TuneSpace, TuneStore,
    Variant,
};

#[derive(Parser)]
#[command(name = "ngemm", version, about = "Low-precision GEMM kernels, packing, benchmarks and tuning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded random matrix file.
    Gen {
        out: PathBuf,
        #[arg(long, value_parser = parse_elem)]
        elem: ElemKind,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Lowest value (defaults to the kind's minimum).
        #[arg(long, allow_hyphen_values = true)]
        lo: Option<i64>,
        #[arg(long, allow_hyphen_values = true)]
        hi: Option<i64>,
    },
    /// Pack a weight matrix into the kernel layout.
    Pack {
        input: PathBuf,
        out: PathBuf,
        #[arg(long, value_parser = parse_isa)]
        isa: Option<IsaProfile>,
        /// Expected kernel path; checked against the input file.
        #[arg(long, value_parser = parse_path)]
        kind: Option<GemmPath>,
        #[command(flatten)]
        tile: TileArgs,
    },
    /// Multiply A (plain or packed, M x K) by B (N x K) into C (M x N).
    Gemm {
        a: PathBuf,
        b: PathBuf,
        out: PathBuf,
        #[arg(long, default_value = "ngemm", value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, default_value = "sat", value_parser = parse_mode)]
        mode: SatMode,
        #[arg(long, value_parser = parse_isa)]
        isa: Option<IsaProfile>,
        #[command(flatten)]
        tile: TileArgs,
        /// Tune store consulted for the tile when A is plain and --tile is absent.
        #[arg(long)]
        tune_store: Option<PathBuf>,
    },
    /// Time conventional and ngemm over a size sweep and write a CSV.
    Bench {
        #[arg(long, value_parser = bench::parse_sizes)]
        sizes: Option<Sizes>,
        /// Both kinds when absent.
        #[arg(long, value_parser = parse_path)]
        kind: Option<GemmPath>,
        #[arg(long, value_parser = parse_isa)]
        isa: Option<IsaProfile>,
        #[arg(long, default_value = "sat", value_parser = parse_mode)]
        mode: SatMode,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        tile: TileArgs,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the latency model to a bench CSV.
    Model {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search tile sizes and loop orders and append the winners to a store.
    Tune {
        #[arg(long, value_parser = bench::parse_sizes)]
        sizes: Sizes,
        #[arg(long, default_value = "u8i8", value_parser = parse_path)]
        kind: GemmPath,
        #[arg(long, value_parser = parse_isa)]
        isa: Option<IsaProfile>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        store: PathBuf,
    },
}

type Sizes = Vec<(usize, usize, usize)>;

#[derive(Args)]
struct TileArgs {
    /// Tile sizes tm,tn,tk.
    #[arg(long, value_parser = parse_tile)]
    tile: Option<(usize, usize, usize)>,
    /// Tile loop order, e.g. mnk or kmn.
    #[arg(long, value_parser = parse_perm)]
    perm: Option<Permutation>,
}

impl TileArgs {
    fn explicit(&self, shape: &KernelShape) -> Result<Option<TileConfig>, Error> {
        let Some((tm, tn, tk)) = self.tile else {
            return Ok(self.perm.map(|perm| TileConfig {
                permutation: perm,
                ..TileConfig::default_for(shape)
            }));
        };
        let cfg = TileConfig::new(tm, tn, tk, self.perm.unwrap_or(Permutation::MNK));
        cfg.validate(shape)?;
        Ok(Some(cfg))
    }

    fn resolve(&self, shape: &KernelShape) -> Result<TileConfig, Error> {
        Ok(self.explicit(shape)?.unwrap_or_else(|| TileConfig::default_for(shape)))
    }
}

fn parse_elem(s: &str) -> Result<ElemKind, String> {
    ElemKind::parse(s).ok_or_else(|| format!("unknown element kind '{s}' (u8, i8, i16, i32)"))
}

fn parse_isa(s: &str) -> Result<IsaProfile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_path(s: &str) -> Result<GemmPath, String> {
    GemmPath::parse(s).ok_or_else(|| format!("unknown kind '{s}' (u8i8, i16)"))
}

fn parse_mode(s: &str) -> Result<SatMode, String> {
    SatMode::parse(s).ok_or_else(|| format!("unknown mode '{s}' (sat, exact)"))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant '{s}' (ref, conventional, ngemm)"))
}

fn parse_perm(s: &str) -> Result<Permutation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_tile(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad tile '{s}', expected tm,tn,tk")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [tm, tn, tk] => Ok((tm, tn, tk)),
        _ => Err(format!("bad tile '{s}', expected tm,tn,tk")),
    }
}

fn path_of_kind(kind: ElemKind) -> Result<GemmPath, Error> {
    match kind {
        ElemKind::U8 => Ok(GemmPath::U8I8),
        ElemKind::I16 => Ok(GemmPath::I16),
        other => Err(Error::UnsupportedPath(other)),
    }
}

fn print_pack_info(p: &PackedWeight) {
    let (s, t) = (p.shape(), p.tile());
    println!("w={} h={} v={}", s.w(), s.h(), s.v());
    println!("tm={} tn={} tk={} perm={}", t.tm, t.tn, t.tk, t.permutation);
    println!("orig={}x{} padded={}x{}", p.m_orig(), p.k_orig(), p.m_pad(), p.k_pad());
    println!("payload_bytes={}", p.payload_bytes());
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Gen {
            out,
            elem,
            rows,
            cols,
            seed,
            lo,
            hi,
        } => {
            let (min, max) = elem.range();
            let m = mat_random(elem, rows, cols, seed, lo.unwrap_or(min), hi.unwrap_or(max))?;
            mat_write(&m, &out)?;
            println!("checksum {}", m.checksum());
        }
        Cmd::Pack {
            input,
            out,
            isa,
            kind,
            tile,
        } => {
            let a = mat_read(&input)?;
            let path = path_of_kind(a.kind())?;
            if kind.is_some_and(|k| k != path) {
                return Err(Error::Shape(format!("{} holds {} weights, not {}", input.display(), a.kind(), kind.unwrap())));
            }
            let shape = kernel_shape(isa.unwrap_or_else(host_isa), a.kind())?;
            let packed = pack_weights(&a, shape, tile.resolve(&shape)?)?;
            packed_write(&packed, &out)?;
            print_pack_info(&packed);
        }
        Cmd::Gemm {
            a,
            b,
            out,
            variant,
            mode,
            isa,
            tile,
            tune_store,
        } => {
            let bm = mat_read(&b)?;
            let c = match (read_any(&a)?, variant) {
                (AnyMatrixFile::Packed(p), Variant::Ngemm) => gemm_ngemm(&p, &bm, mode)?,
                (AnyMatrixFile::Packed(_), v) => {
                    return Err(Error::Config(format!(
                        "{} is a packed weight; variant {v} needs a plain matrix (use --variant ngemm)",
                        a.display()
                    )))
                }
                (AnyMatrixFile::Plain(am), variant) => {
                    let problem = GemmProblem::from_operands(&am, &bm)?;
                    let isa = isa.unwrap_or_else(host_isa);
                    let shape = kernel_shape(isa, am.kind())?;
                    match variant {
                        Variant::Ref => gemm_ref(&am, &bm, &problem)?,
                        Variant::Conventional => gemm_conventional(&am, &bm, &shape, mode)?,
                        Variant::Ngemm => {
                            let cfg = match (tile.explicit(&shape)?, tune_store) {
                                (Some(cfg), _) => cfg,
                                (None, Some(store)) => TuneStore::new(store)
                                    .lookup(&problem, isa)?
                                    .map_or_else(|| TileConfig::default_for(&shape), |r| r.best),
                                (None, None) => TileConfig::default_for(&shape),
                            };
                            gemm_ngemm(&pack_weights(&am, shape, cfg)?, &bm, mode)?
                        }
                    }
                }
            };
            mat_write(&c, &out)?;
            println!("checksum {}", c.checksum());
        }
        Cmd::Bench {
            sizes,
            kind,
            isa,
            mode,
            repeats,
            warmup,
            seed,
            tile,
            out,
        } => {
            let mut cfg = BenchConfig::new(isa.unwrap_or_else(host_isa));
            if let Some(sizes) = sizes {
                cfg.sizes = sizes;
            }
            if let Some(kind) = kind {
                cfg.paths = vec![kind];
            }
            if tile.tile.is_some() || tile.perm.is_some() {
                if cfg.paths.len() != 1 {
                    return Err(Error::Config("--tile and --perm need a single --kind".into()));
                }
                cfg.tile = tile.explicit(&kernel_shape(cfg.isa, cfg.paths[0].a_kind())?)?;
            }
            cfg.mode = mode;
            cfg.repeats = repeats;
            cfg.warmup = warmup;
            cfg.seed = seed;
            let report = bench::run_bench(&cfg)?;
            let mut w = open_out(out.as_deref())?;
            bench::write_csv(&mut w, &report)?;
            w.flush()?;
            if out.is_some() {
                println!("geomean speedup {:.4}", report.geomean_speedup);
            }
        }
        Cmd::Model { csv, out } => {
            let rows = bench::read_csv(File::open(&csv)?)?;
            let report = bench::model_from_rows(&rows)?;
            let mut w = open_out(out.as_deref())?;
            bench::write_model_report(&mut w, &report)?;
            w.flush()?;
        }
        Cmd::Tune {
            sizes,
            kind,
            isa,
            repeats,
            warmup,
            seed,
            store,
        } => {
            let isa = isa.unwrap_or_else(host_isa);
            let store = TuneStore::new(store);
            let opts = TuneOptions { repeats, warmup, seed };
            for (m, n, k) in sizes {
                let problem = GemmProblem::for_path(kind, m, n, k)?;
                let rec = tune_with(&problem, &TuneSpace::default(), isa, opts, &mut NgemmRunner::default())?;
                store.append(&rec)?;
                println!("{rec}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
