//! Command-line interface.
//!
//! ```text
//! moalign [--config FILE] [--jobs N] [--<section>.<key> VALUE ...] <command>
//! ```
//!
//! Any flag whose name contains a dot (or names a top-level key such as
//! `--output_dir`) overrides the matching configuration path.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const TOP_LEVEL_KEYS: [&str; 1] = ["output_dir"];

#[derive(Debug, Parser)]
#[command(name = "moalign", version, about = "Multi-objective preference alignment on synthetic linear-reward environments")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Maximum worker threads for parallel regions.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an environment and write it as JSON.
    EnvGen {
        /// Output file (default: <output_dir>/env.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build one preference dataset per objective from a policy's generations.
    DataBuild {
        #[arg(long)]
        env: PathBuf,
        /// Policy file (default: the SFT policy fitted to the environment).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Output directory (default: <output_dir>/datasets).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the self-iteration loop.
    Iterate {
        /// Environment file (default: generate from the config).
        #[arg(long)]
        env: Option<PathBuf>,
        /// Continue after a completed iteration directory `iter_<k>`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Monte-Carlo check of an estimation or sub-optimality bound.
    Verify {
        which: Bound,
        /// Calibrate the radius constant before verifying.
        #[arg(long)]
        calibrate: bool,
        /// Output directory (default: <output_dir>/verify).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write Pareto front CSVs from an iteration directory.
    Pareto {
        #[arg(long)]
        dir: PathBuf,
        /// Axis pair such as `0,2`; repeatable (default: every pair).
        #[arg(long, value_parser = parse_axes)]
        axes: Vec<(usize, usize)>,
        /// Output directory (default: the iteration directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bound {
    Lemma1,
    Theorem1,
}

fn parse_axes(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad axis {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad axis {b:?}"))?;
    if a == b {
        return Err("axes must differ".into());
    }
    Ok((a, b))
}

/// `(dotted.path, raw value)` pairs taken from the command line.
pub type Overrides = Vec<(String, String)>;

/// Splits `--path.to.key value` and `--path.to.key=value` overrides from the
/// arguments clap should see.
pub fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.to_str().and_then(|s| s.strip_prefix("--")).map(str::to_string) else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.clone(), None),
        };
        if !(key.contains('.') || TOP_LEVEL_KEYS.contains(&key.as_str())) {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| format!("override --{key} needs a value"))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    let (rest, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let seed_var = std::env::var(config::SEED_ENV_VAR).ok();
    let config = match RunConfig::load(cli.config.as_deref(), &overrides, seed_var.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if cli.jobs == Some(0) {
        eprintln!("error: --jobs must be >= 1");
        return EXIT_USAGE;
    }
    let outcome = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli.command, &config)),
            Err(e) => Err(Error::InvalidArgument(format!("cannot start {n} workers: {e}"))),
        },
        None => commands::dispatch(&cli.command, &config),
    };
    match outcome {
        Ok(commands::Outcome::Success) => EXIT_OK,
        Ok(commands::Outcome::VerificationFailed) => EXIT_VERIFY,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
