use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Parser, ValueEnum};
use mmpgo::io::bench::{
    run_benchmark, BenchAlgorithm, BenchmarkSpec, DatasetSource, ReferenceSpec, RunMode,
    AUTO_REFERENCE_ITERS,
};
use mmpgo::io::cube::CubeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Mm,
    Amm,
    ChordalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Distributed,
    Shared,
}

/// `GRID,SIDE,P,ST,SR,SEED`, or `mini`/`full` for the preset grids.
#[derive(Debug, Clone, Copy)]
struct CubeArg(CubeConfig);

impl FromStr for CubeArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mini" => return Ok(CubeArg(CubeConfig::mini(0))),
            "full" => return Ok(CubeArg(CubeConfig::full(0))),
            _ => {}
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(format!("expected GRID,SIDE,P,ST,SR,SEED, got {s:?}"));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            parts[i].parse().map_err(|_| format!("invalid number {:?}", parts[i]))
        };
        Ok(CubeArg(CubeConfig {
            grid: parts[0].parse().map_err(|_| format!("invalid grid {:?}", parts[0]))?,
            side_length: num(1)?,
            loop_probability: num(2)?,
            sigma_t: num(3)?,
            sigma_r: num(4)?,
            seed: parts[5].parse().map_err(|_| format!("invalid seed {:?}", parts[5]))?,
        }))
    }
}

/// `auto` (long centralized run) or a numeric optimum.
#[derive(Debug, Clone, Copy)]
enum ReferenceArg {
    Auto,
    Value(f64),
}

impl FromStr for ReferenceArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            Ok(ReferenceArg::Auto)
        } else {
            s.parse()
                .map(ReferenceArg::Value)
                .map_err(|_| format!("expected a number or 'auto', got {s:?}"))
        }
    }
}

/// Runs MM-PGO / AMM-PGO benchmarks on a g2o file or a synthetic cube.
#[derive(Debug, Parser)]
#[command(name = "mmpgo", version, about)]
#[command(group(ArgGroup::new("input").required(true).args(["dataset", "cube"])))]
struct Cli {
    /// g2o file (SE2 or SE3:QUAT).
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Synthetic cube: GRID,SIDE,P,ST,SR,SEED or the presets mini / full.
    #[arg(long)]
    cube: Option<CubeArg>,

    /// Number of robots (contiguous partition).
    #[arg(long, default_value_t = 1)]
    robots: usize,

    /// Algorithms to run.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Algo::Mm, Algo::Amm])]
    algo: Vec<Algo>,

    /// Iteration budgets to report.
    #[arg(long, value_delimiter = ',', default_values_t = [100, 250, 1000])]
    iters: Vec<usize>,

    /// Proximal parameter.
    #[arg(long, default_value_t = mmpgo::solvers::DEFAULT_XI)]
    xi: f64,

    /// Reference optimum F*, or `auto` for a centralized AMM run.
    #[arg(long)]
    reference: Option<ReferenceArg>,

    /// Iterations of the `auto` reference run.
    #[arg(long, default_value_t = AUTO_REFERENCE_ITERS)]
    reference_iters: usize,

    /// Report (F - F*)/F*; requires a reference.
    #[arg(long)]
    relative_gap: bool,

    /// Start from the distributed chordal initialization.
    #[arg(long)]
    chordal: bool,

    /// Directory for traces and the summary.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Seed for the synthetic cube (overrides the one in --cube).
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for shared-memory runs.
    #[arg(long)]
    threads: Option<usize>,

    /// Message-passing runtime or shared memory.
    #[arg(long, value_enum, default_value_t = Mode::Distributed)]
    mode: Mode,
}

fn spec_from(cli: Cli) -> Result<BenchmarkSpec> {
    let dataset = match (cli.dataset, cli.cube) {
        (Some(path), None) => {
            if cli.seed.is_some() {
                bail!("--seed only applies to --cube");
            }
            DatasetSource::G2o(path)
        }
        (None, Some(CubeArg(mut cfg))) => {
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            DatasetSource::Cube(cfg)
        }
        _ => bail!("pass exactly one of --dataset and --cube"),
    };
    let mut spec = BenchmarkSpec::new(dataset);
    spec.robots = cli.robots;
    spec.algorithms = cli
        .algo
        .iter()
        .map(|a| match a {
            Algo::Mm => BenchAlgorithm::Mm,
            Algo::Amm => BenchAlgorithm::Amm,
            Algo::ChordalOnly => BenchAlgorithm::ChordalOnly,
        })
        .collect();
    spec.iters = cli.iters;
    spec.xi = cli.xi;
    spec.reference = match cli.reference {
        None => ReferenceSpec::None,
        Some(ReferenceArg::Auto) => ReferenceSpec::Centralized(cli.reference_iters),
        Some(ReferenceArg::Value(v)) => ReferenceSpec::Value(v),
    };
    spec.relative_gap = cli.relative_gap;
    spec.chordal = cli.chordal;
    spec.out = cli.out;
    spec.threads = cli.threads;
    spec.mode = match cli.mode {
        Mode::Distributed => RunMode::Distributed,
        Mode::Shared => RunMode::Shared,
    };
    Ok(spec)
}

fn main() -> Result<()> {
    let spec = spec_from(Cli::parse())?;
    let report = run_benchmark(&spec).context("benchmark failed")?;
    print!("{}", report.table());
    for (algo, rot, trans) in &report.rmse {
        println!("{:<10} aligned RMSE: rotation {rot:.4e} rad, translation {trans:.4e} m", algo.label());
    }
    if let Some(dir) = &spec.out {
        println!("wrote traces and summary to {}", dir.display());
    }
    Ok(())
}
