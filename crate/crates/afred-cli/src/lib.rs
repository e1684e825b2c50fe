//! Command-line front end for the adiabatic reduction library.
//!
//! Five subcommands cover the pipeline: `verify` audits every defining
//! estimate of a family, `reduce` solves the reduced map on a parameter ×
//! kernel grid, `zeros` cross-checks reduced zeros against a brute-force
//! search on the full family, `profile` tracks reduced-derivative
//! convergence along a parameter path, and `strip-check` runs the structural
//! identities of the discrete strip model. Every command writes a
//! deterministic `report.json` (byte-identical across runs) plus a
//! `report.meta.json` sidecar holding the varying run metadata.

pub mod commands;

use afred_core::models::{model_by_name, StripGrid};
use afred_core::sample::SamplePlan;
use afred_core::AdiabaticFamily;
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Top-level argument parser.
#[derive(Debug, Parser)]
#[command(
    name = "afred",
    version,
    about = "Finite-dimensional reductions of adiabatic families, with numerical audits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// The available subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Audit every defining estimate of a family.
    Verify(VerifyArgs),
    /// Solve the reduced map on a parameter × kernel grid.
    Reduce(ReduceArgs),
    /// Find zeros of the reduced map and cross-check them against a
    /// brute-force search on the full family.
    Zeros(ZerosArgs),
    /// Profile reduced-derivative convergence along a parameter path.
    Profile(ProfileArgs),
    /// Run the structural checks of the discrete strip model.
    StripCheck(StripCheckArgs),
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Family to run on: classical-parabola, squared-map, toy-shrink,
    /// toy-shrink-broken, or discrete-strip.
    #[arg(long)]
    pub family: Option<String>,
    /// Offset-parameter bound for the toy families.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Strip grid: number of s-nodes.
    #[arg(long)]
    pub grid_ns: Option<usize>,
    /// Strip grid: number of t-intervals.
    #[arg(long)]
    pub grid_nt: Option<usize>,
    /// Deterministic sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Contraction target θ in (0, 1).
    #[arg(long)]
    pub theta: Option<f64>,
    /// Fixed-point iteration tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Residual below which a point counts as a zero.
    #[arg(long)]
    pub zero_tol: Option<f64>,
    /// Distance below which two zeros count as the same.
    #[arg(long)]
    pub match_tol: Option<f64>,
    /// Worker threads (also AFRED_WORKERS; default: one per core).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the smaller sampling plan.
    #[arg(long)]
    pub quick: bool,
    /// Widen the kernel ball to this radius; the widened plan is certified
    /// at run time instead of by the radius formulas.
    #[arg(long)]
    pub widen: Option<f64>,
}

/// `verify` options.
#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Highest tangent order for the lift-bound audit (1 or 2).
    #[arg(long, default_value_t = 2)]
    pub level: u32,
}

/// `reduce` options.
#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Parameter point, comma-separated; repeat for several points.
    /// Default: the box scaled by 1, 1/2, and 1/4.
    #[arg(long = "eps")]
    pub eps: Vec<String>,
    /// Kernel grid per dimension as min:max:count. Default: five points
    /// across ±0.9 of the certified kernel radius.
    #[arg(long)]
    pub k_grid: Option<String>,
}

/// `zeros` options.
#[derive(Debug, Args)]
pub struct ZerosArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Parameter point, comma-separated. Default: the box midpoint.
    #[arg(long)]
    pub eps: Option<String>,
    /// Number of multi-start seeds per search.
    #[arg(long, default_value_t = 64)]
    pub n_seeds: usize,
}

/// `profile` options.
#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Semicolon-separated parameter path; the last entry is the reference.
    /// Default: the box scaled by 1, 1/2, 1/4, 1/8, 0.
    #[arg(long)]
    pub eps_path: Option<String>,
    /// Highest derivative order to profile (0 to 2).
    #[arg(long, default_value_t = 2)]
    pub order: u32,
    /// Pass threshold for the final sup-difference of each order.
    #[arg(long, default_value_t = 1e-9)]
    pub profile_tol: f64,
}

/// `strip-check` options.
#[derive(Debug, Args)]
pub struct StripCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of random draws per isomorphism identity.
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
}

/// Config-file counterpart of the shared options.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub family: Option<String>,
    pub tau: Option<f64>,
    pub grid_ns: Option<usize>,
    pub grid_nt: Option<usize>,
    pub seed: Option<u64>,
    pub theta: Option<f64>,
    pub tol: Option<f64>,
    pub zero_tol: Option<f64>,
    pub match_tol: Option<f64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub quick: Option<bool>,
    pub widen: Option<f64>,
}

/// Fully resolved run settings: defaults, then config file, then flags.
#[derive(Debug, Clone)]
pub struct Settings {
    pub family: String,
    pub tau: f64,
    pub grid_ns: usize,
    pub grid_nt: usize,
    pub seed: u64,
    pub theta: f64,
    pub tol: f64,
    pub zero_tol: f64,
    pub match_tol: f64,
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub quick: bool,
    pub widen: Option<f64>,
}

impl Settings {
    /// Merges defaults, the optional config file, and explicit flags.
    pub fn resolve(common: &CommonArgs) -> anyhow::Result<Self> {
        let file: FileConfig = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let workers = common
            .workers
            .or(file.workers)
            .or_else(|| std::env::var("AFRED_WORKERS").ok().and_then(|v| v.parse().ok()));
        let settings = Self {
            family: common
                .family
                .clone()
                .or(file.family)
                .unwrap_or_else(|| "toy-shrink".into()),
            tau: common.tau.or(file.tau).unwrap_or(0.01),
            grid_ns: common.grid_ns.or(file.grid_ns).unwrap_or(4),
            grid_nt: common.grid_nt.or(file.grid_nt).unwrap_or(2),
            seed: common.seed.or(file.seed).unwrap_or(7),
            theta: common.theta.or(file.theta).unwrap_or(0.5),
            tol: common.tol.or(file.tol).unwrap_or(1e-10),
            zero_tol: common.zero_tol.or(file.zero_tol).unwrap_or(1e-8),
            match_tol: common.match_tol.or(file.match_tol).unwrap_or(1e-6),
            workers,
            out: common
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("afred-out")),
            quick: common.quick || file.quick.unwrap_or(false),
            widen: common.widen.or(file.widen),
        };
        if !(settings.theta > 0.0 && settings.theta < 1.0) {
            bail!("theta must lie strictly between 0 and 1");
        }
        if settings.tol <= 0.0 || settings.zero_tol <= 0.0 || settings.match_tol <= 0.0 {
            bail!("tolerances must be positive");
        }
        Ok(settings)
    }

    /// Builds the configured family.
    pub fn family(&self) -> anyhow::Result<AdiabaticFamily> {
        let grid = if self.family == "discrete-strip" {
            Some(StripGrid::with_size(self.grid_ns, self.grid_nt))
        } else {
            None
        };
        Ok(model_by_name(&self.family, self.tau, grid)?)
    }

    /// The sampling plan for audits.
    pub fn plan(&self) -> SamplePlan {
        if self.quick {
            SamplePlan::quick(self.seed)
        } else {
            SamplePlan {
                seed: self.seed,
                ..SamplePlan::default()
            }
        }
    }

    /// Installs the requested rayon pool size. A no-op once the global pool
    /// exists, so only the first call in a process takes effect.
    pub fn init_workers(&self) {
        if let Some(n) = self.workers {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses one comma-separated parameter vector.
pub fn parse_eps(text: &str, dim: usize) -> anyhow::Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing parameter point '{text}'"))?;
    if vals.len() != dim {
        bail!("parameter point '{text}' has {} coordinates, expected {dim}", vals.len());
    }
    Ok(vals)
}

/// Parses a kernel-grid spec `min:max:count`.
pub fn parse_k_grid(text: &str) -> anyhow::Result<(f64, f64, usize)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("kernel grid spec '{text}' is not min:max:count");
    }
    let min: f64 = parts[0].trim().parse().context("kernel grid min")?;
    let max: f64 = parts[1].trim().parse().context("kernel grid max")?;
    let count: usize = parts[2].trim().parse().context("kernel grid count")?;
    if !(min < max) || count < 2 {
        bail!("kernel grid spec '{text}' needs min < max and count ≥ 2");
    }
    Ok((min, max, count))
}

/// Prints one audit verdict line.
pub fn verdict(pass: bool, name: &str, detail: &str) {
    let tag = if pass { "[PASS]" } else { "[FAIL]" };
    println!("{tag} {name}: {detail}");
}

/// Writes the canonical report, its metadata sidecar, and — on failure — the
/// `FAILED` marker listing what went wrong.
pub fn write_reports<T: serde::Serialize>(
    out: &Path,
    report: &T,
    meta: &afred_core::report::RunMeta,
    pass: bool,
    failures: &[String],
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    std::fs::write(out.join("report.json"), afred_core::report::canonical_json(report)?)?;
    std::fs::write(
        out.join("report.meta.json"),
        afred_core::report::canonical_json(meta)?,
    )?;
    let marker = out.join("FAILED");
    if pass {
        if marker.exists() {
            std::fs::remove_file(&marker)?;
        }
    } else {
        std::fs::write(&marker, failures.join("\n") + "\n")?;
    }
    Ok(())
}

/// Runs one parsed invocation; returns the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Verify(args) => commands::verify(&args),
        Command::Reduce(args) => commands::reduce(&args),
        Command::Zeros(args) => commands::zeros(&args),
        Command::Profile(args) => commands::profile(&args),
        Command::StripCheck(args) => commands::strip_check(&args),
    }
}
