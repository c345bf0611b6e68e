//! Command-line front end for coupled wave / Klein-Gordon systems in two
//! space dimensions: condition checks, finite-difference runs, asymptotic
//! profile transport, and decay analysis on finished runs.
//!
//! Exit codes, shared by all subcommands: 0 success (for `check`: the
//! condition holds), 1 runtime failure, 2 the checked condition fails,
//! 3 the certificate search came up empty, 4 configuration or usage error.

mod analyze;
mod check;
mod config;
mod emit;
mod profile;
mod simulate;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONDITION_FAILS: i32 = 2;
pub const EXIT_SEARCH_ABSENT: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Parser)]
#[command(
    name = "kmswkg",
    version,
    about = "Coupled wave / Klein-Gordon systems in 2D: null and positivity \
             condition checks, simulation, profile transport, decay analysis"
)]
struct Cli {
    /// Worker threads for parallel sections; KMSWKG_THREADS is the fallback.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide the null condition, then verify or search a certificate.
    ///
    /// Exits 0 when the condition holds, 2 when it fails under the supplied
    /// or identity certificate, 3 when the search finds none.
    Check {
        /// Preset name; shorthand for --preset.
        #[arg(conflicts_with = "preset")]
        name: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Also write the verdict record to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the witness draw, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evolve the configured system and write a run directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config 'out' key.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recorded in the run metadata, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Integrate profile trajectories along configured rays.
    Profile {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Directory receiving profile.ndjson; omit for stdout summary only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit and consistency-check a finished run directory.
    Analyze { run_dir: PathBuf },
    /// Preset catalog operations.
    Preset {
        #[command(subcommand)]
        action: PresetCmd,
    },
}

#[derive(Subcommand)]
enum PresetCmd {
    /// List the built-in systems and their parameters.
    List,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return EXIT_CONFIG;
    }
    let outcome = match cli.command {
        Cmd::Check { name, config, preset, out, seed } => {
            let preset = preset.or(name);
            check::run(check::CheckArgs { config, preset, out, seed })
        }
        Cmd::Simulate { config, out, seed } => {
            simulate::run_cmd(simulate::SimArgs { config, out, seed })
        }
        Cmd::Profile { config, preset, out } => {
            profile::run(profile::ProfileArgs { config, preset, out })
        }
        Cmd::Analyze { run_dir } => analyze::run(analyze::AnalyzeArgs { run_dir }),
        Cmd::Preset { action: PresetCmd::List } => preset_list(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<config::ConfigPhase>() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("KMSWKG_THREADS") {
            Ok(s) => Some(s.parse::<usize>().map_err(|_| {
                anyhow::anyhow!("KMSWKG_THREADS must be a positive integer, got '{s}'")
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            anyhow::bail!("thread count must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn preset_list() -> Result<i32> {
    for p in kmswkg_core::presets::catalog() {
        println!("{}", p.name);
        println!("    {}", p.summary);
        for param in p.params {
            println!("    {} = {}  ({})", param.name, param.default, param.doc);
        }
    }
    Ok(EXIT_OK)
}
