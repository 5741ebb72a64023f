//! Command-line front end for `snoopband`.
//!
//! [`run`] parses arguments, dispatches a subcommand inside an optional
//! fixed-size worker pool and writes a manifest sidecar. Exit codes: 0 on
//! success, 2 when a flag fails validation, 1 when a computation fails.

pub mod cache;
mod commands;
pub mod csvio;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use snoopband::critval::Sides;
use snoopband::locpoly::VarianceMethod;
use snoopband::mc::{RangeRule, Target};
use thiserror::Error;

use crate::cache::{CacheError, CritValLedger};
use crate::manifest::Manifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{module} error: {msg}")]
    Runtime { module: &'static str, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }

    fn runtime(module: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Runtime { module, msg: e.to_string() }
    }
}

macro_rules! runtime_from {
    ($($ty:ty => $module:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::runtime($module, e)
            }
        })*
    };
}

runtime_from! {
    snoopband::critval::CritValError => "critval",
    snoopband::kernels::KernelError => "kernels",
    snoopband::locpoly::LocPolyError => "locpoly",
    snoopband::bands::BandError => "bands",
    snoopband::treatment::TreatmentError => "treatment",
    snoopband::mc::McError => "mc",
    csvio::CsvError => "csv",
    CacheError => "cache",
    std::io::Error => "io",
}

#[derive(Debug, Parser)]
#[command(name = "snoopband", version, about = "Bandwidth-snooping adjusted critical values and confidence bands")]
pub struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, value_parser = parse_threads)]
    pub threads: Option<usize>,
    /// Critical-value cache ledger.
    #[arg(long, global = true, default_value = "snoopband-cache.csv")]
    pub cache: PathBuf,
    /// Do not read or write the cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
    /// Manifest path; defaults to `<out>.manifest` or `./snoopband.manifest`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulated critical value for one ratio.
    Critval(CritvalArgs),
    /// Preset tables of critical values.
    Tables(TablesArgs),
    /// Regression discontinuity estimate at one bandwidth.
    Rd(RdArgs),
    /// Pointwise and adjusted bands over a bandwidth grid.
    Band(BandArgs),
    /// Adjusted interval for a published estimate.
    Adjust(AdjustArgs),
    /// LATE band over instrument window widths.
    Late(LateArgs),
    /// Trimmed-ATE band over trimming levels.
    AteTrim(AteTrimArgs),
    /// Monte Carlo coverage study.
    Mc(McArgs),
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// Built-in kernel: uniform, triangular or epanechnikov.
    #[arg(long, default_value = "triangular", conflicts_with = "kernel_file")]
    pub kernel: String,
    /// Kernel config file with `name`, `support` and `[lo, hi]: c0 c1 ...` lines.
    #[arg(long)]
    pub kernel_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Monte Carlo replications for the critical value.
    #[arg(long, default_value_t = snoopband::critval::DEFAULT_REPS_INTERACTIVE, value_parser = parse_reps)]
    pub reps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Grid points per unit of log ratio.
    #[arg(long, default_value_t = snoopband::critval::DEFAULT_GRID_PER_LOG, value_parser = parse_grid_per_log)]
    pub grid_per_log: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CritvalArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 0)]
    pub order: usize,
    /// Ratio of the largest to the smallest bandwidth.
    #[arg(long, value_parser = parse_ratio)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, default_value = "two")]
    pub sides: Sides,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Use the extreme-value approximation instead of simulating.
    #[arg(long)]
    pub ev_approx: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Table1,
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
}

#[derive(Debug, Clone, Args)]
pub struct TablesArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = snoopband::critval::DEFAULT_REPS_TABLE, value_parser = parse_table_reps)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = snoopband::critval::DEFAULT_GRID_PER_LOG, value_parser = parse_grid_per_log)]
    pub grid_per_log: usize,
    /// Skip the doubled-grid check.
    #[arg(long)]
    pub no_richardson: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RdArgs {
    /// CSV with header `x,y` (sharp) or `x,d,y` (fuzzy).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, default_value = "nn", value_parser = parse_sample_variance)]
    pub var: VarianceMethod,
    #[arg(long, value_parser = parse_positive)]
    pub h: f64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BandArgs {
    /// CSV with header `x,y` (sharp) or `x,d,y` (fuzzy).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, default_value = "nn", value_parser = parse_sample_variance)]
    pub var: VarianceMethod,
    #[arg(long, value_parser = parse_positive)]
    pub hmin: f64,
    #[arg(long, value_parser = parse_positive)]
    pub hmax: f64,
    /// Number of evenly spaced bandwidths.
    #[arg(long, default_value_t = 100, value_parser = parse_count)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, default_value = "two")]
    pub sides: Sides,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AdjustArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub theta: f64,
    /// Standard error of the estimate.
    #[arg(long, value_parser = parse_positive, required_unless_present_all = ["pw_lo", "pw_hi"], conflicts_with_all = ["pw_lo", "pw_hi"])]
    pub se: Option<f64>,
    /// Lower end of the published pointwise interval; the standard error is inferred.
    #[arg(long, allow_hyphen_values = true, requires = "pw_hi")]
    pub pw_lo: Option<f64>,
    /// Upper end of the published pointwise interval.
    #[arg(long, allow_hyphen_values = true, requires = "pw_lo")]
    pub pw_hi: Option<f64>,
    #[arg(long, value_parser = parse_ratio)]
    pub ratio: f64,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, default_value = "two")]
    pub sides: Sides,
    /// Also report the largest ratio at which this value stays excluded.
    #[arg(long, allow_hyphen_values = true)]
    pub exclude: Option<f64>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LateArgs {
    /// CSV with header `z,d,y`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_positive)]
    pub hmin: f64,
    #[arg(long, value_parser = parse_positive)]
    pub hmax: f64,
    #[arg(long, default_value_t = 20, value_parser = parse_count)]
    pub grid: usize,
    /// Lower end of the instrument's support; defaults to the sample minimum.
    #[arg(long, allow_hyphen_values = true, requires = "zmax")]
    pub zmin: Option<f64>,
    /// Upper end of the instrument's support; defaults to the sample maximum.
    #[arg(long, allow_hyphen_values = true, requires = "zmin")]
    pub zmax: Option<f64>,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, default_value = "two")]
    pub sides: Sides,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AteTrimArgs {
    /// CSV with header `y,d,e,mu0,mu1`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_trim)]
    pub hmin: f64,
    #[arg(long, value_parser = parse_trim)]
    pub hmax: f64,
    #[arg(long, default_value_t = 21, value_parser = parse_count)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub design: u8,
    #[arg(long, default_value_t = snoopband::mc::DEFAULT_REPS, value_parser = parse_count)]
    pub reps: usize,
    /// Observations per replication.
    #[arg(long, default_value_t = snoopband::mc::DEFAULT_N, value_parser = parse_count)]
    pub n: usize,
    /// Bandwidths per replication.
    #[arg(long, default_value_t = snoopband::mc::DEFAULT_H_GRID_POINTS, value_parser = parse_count)]
    pub h_grid: usize,
    #[arg(long, default_value = "half-to-one")]
    pub range: RangeRule,
    /// Built-in kernels, comma separated.
    #[arg(long, default_value = "triangular", value_delimiter = ',')]
    pub kernel: Vec<String>,
    #[arg(long, default_value = "1", value_delimiter = ',')]
    pub order: Vec<usize>,
    #[arg(long, default_value = "exact", value_delimiter = ',')]
    pub var: Vec<VarianceMethod>,
    #[arg(long, default_value = "theta_h")]
    pub target: Target,
    /// `pilot`, `ik`, or a fixed bandwidth.
    #[arg(long, default_value = "pilot")]
    pub baseline: String,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    /// Replications for the adjusted critical value.
    #[arg(long, default_value_t = snoopband::critval::DEFAULT_REPS_TABLE, value_parser = parse_reps)]
    pub critval_reps: usize,
    #[arg(long, default_value_t = snoopband::critval::DEFAULT_GRID_PER_LOG, value_parser = parse_grid_per_log)]
    pub grid_per_log: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v >= 1.0 {
        Ok(v)
    } else {
        Err("ratio must be ≥ 1".into())
    }
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 0.5 {
        Ok(v)
    } else {
        Err("alpha must lie in (0, 0.5]".into())
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn parse_trim(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if (0.0..0.5).contains(&v) {
        Ok(v)
    } else {
        Err("trimming level must lie in [0, 0.5)".into())
    }
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn parse_count(s: &str) -> Result<usize, String> {
    match parse_usize(s)? {
        0 => Err("must be at least 1".into()),
        n => Ok(n),
    }
}

fn parse_threads(s: &str) -> Result<usize, String> {
    parse_count(s)
}

fn parse_reps(s: &str) -> Result<usize, String> {
    match parse_usize(s)? {
        n if n >= 2 => Ok(n),
        _ => Err("replications must be at least 2".into()),
    }
}

fn parse_table_reps(s: &str) -> Result<usize, String> {
    match parse_usize(s)? {
        n if n >= 1000 => Ok(n),
        _ => Err("tables need at least 1000 replications".into()),
    }
}

fn parse_grid_per_log(s: &str) -> Result<usize, String> {
    parse_count(s)
}

/// Variance methods that can be computed from data alone.
fn parse_sample_variance(s: &str) -> Result<VarianceMethod, String> {
    match s.parse::<VarianceMethod>()? {
        VarianceMethod::Exact => {
            Err("exact variance needs the true conditional variance; use ehw, nn or plugin".into())
        }
        m => Ok(m),
    }
}

/// Shared state for one invocation.
pub(crate) struct Context {
    pub ledger: Option<CritValLedger>,
    pub manifest: Manifest,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut manifest = Manifest::new();
    manifest.set("version", env!("CARGO_PKG_VERSION"));
    manifest.set("argv", argv.iter().map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>().join(" "));
    if let Some((name, sub)) = matches.subcommand() {
        manifest.set("command", name);
        let cmd = Cli::command();
        let known: Vec<String> = cmd
            .find_subcommand(name)
            .map(|c| c.get_arguments().map(|a| a.get_id().to_string()).collect())
            .unwrap_or_default();
        let mut ids: Vec<&str> = sub.ids().map(|id| id.as_str()).filter(|id| known.iter().any(|k| k == id)).collect();
        ids.sort_unstable();
        for id in ids {
            if let Ok(Some(raw)) = sub.try_get_raw(id) {
                let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
                manifest.set(id, vals.join(","));
            }
        }
    }
    manifest.set("threads", cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())));
    match execute(&cli, manifest) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, mut manifest: Manifest) -> Result<(), CliError> {
    let ledger = if cli.no_cache {
        manifest.set("cache", "disabled");
        None
    } else {
        manifest.set("cache", cli.cache.display());
        Some(CritValLedger::open(&cli.cache)?)
    };
    let mut ctx = Context { ledger, manifest };
    let manifest_path = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::runtime("threads", e))?
            .install(|| commands::dispatch(&cli.command, &mut ctx))?,
        None => commands::dispatch(&cli.command, &mut ctx)?,
    };
    if let Some(l) = &ctx.ledger {
        ctx.manifest.set("cache_hits", l.hits);
        ctx.manifest.set("cache_misses", l.misses);
    }
    let path = cli.manifest.clone().unwrap_or(manifest_path);
    ctx.manifest.write(&path)?;
    Ok(())
}
