//! `rayleigh`: runs scattering sweeps, molecular dynamics, jump-process
//! simulations and comparison campaigns from a TOML config.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 threshold violation reported by `validate`.

use clap::{Args, Parser, Subcommand};
use rayleigh_core::campaign::{self, Subcommand as Cmd};
use rayleigh_core::config::RunConfig;
use rayleigh_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Worker-count variable; it never changes results.
const WORKERS_ENV: &str = "RAYLEIGH_WORKERS";

#[derive(Parser)]
#[command(name = "rayleigh", version, about = "Rayleigh-gas kinetic toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deviation angles, closest approach and scattering times on a grid.
    Scatter(Common),
    /// Short-range molecular dynamics with trees and classifications.
    SimulateMd(Common),
    /// Jump-process walkers, trees and density estimates.
    SimulateLbe(Common),
    /// Distances, divergence, excluded sets and operator gaps.
    Compare(Common),
    /// Per-cell reports over the epsilon grid plus a summary table.
    Sweep(Common),
    /// Config checks and quick threshold tests.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. `--set scaling.horizon=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not KEY=VALUE")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for p in path {
        table = table
            .get_mut(*p)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::Config(format!("override `{key}`: no table `{p}`")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    if common.overrides.is_empty() {
        return RunConfig::from_path(&common.config);
    }
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
    let mut doc: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    for o in &common.overrides {
        apply_override(&mut doc, o)?;
    }
    RunConfig::parse(&toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        match e {
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            _ => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // an already-initialized pool only means the default stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (cmd, common) = match &cli.command {
        Command::Scatter(c) => (Cmd::Scatter, c),
        Command::SimulateMd(c) => (Cmd::SimulateMd, c),
        Command::SimulateLbe(c) => (Cmd::SimulateLbe, c),
        Command::Compare(c) => (Cmd::Compare, c),
        Command::Sweep(c) => (Cmd::Sweep, c),
        Command::Validate(c) => (Cmd::Validate, c),
    };
    let cfg = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(1);
        }
    };
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    match campaign::run(cmd, &cfg, &out) {
        Ok(outcome) => {
            println!("{}: wrote {} files to {}", cmd.name(), outcome.files.len(), out.display());
            if outcome.violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                for v in &outcome.violations {
                    eprintln!("violation: {v}");
                }
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error ({}): {e}", cmd.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
