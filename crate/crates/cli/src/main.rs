use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use decoy_keysize::decomposition::build_decomposition;
use decoy_keysize::runner::{
    decomposition_csv, keysize, mc_validate, optimize_intensities, rows_csv, scan_delta, scan_distance,
    ScenarioConfig, SweepAxis, SweepRow,
};
use decoy_keysize::{Basis, Error, Variant};

/// Finite-code-length key sizes of decoy-state BB84.
#[derive(Parser)]
#[command(name = "decoy-keysize", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Scenario file; built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed of the Monte-Carlo campaign.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "reverse|forward")]
    variant: Option<Variant>,
    #[arg(long, global = true, value_name = "plus|times")]
    basis: Option<Basis>,
}

#[derive(Subcommand)]
enum Command {
    /// Photon-number decomposition of the configured profile.
    Decompose,
    /// Final key size of the configured profile.
    Keysize,
    /// Optimised key rate over `sweep.distances_km`.
    ScanDistance,
    /// Optimised key rate over `sweep.deltas`.
    ScanDelta,
    /// Best intensities and sending probabilities at the configured distance.
    Optimize,
    /// Monte-Carlo check of the variance, the coverage and the phase-error bound.
    McValidate,
}

/// Output text and whether the protocol aborted.
struct Report {
    text: String,
    aborted: bool,
}

fn row_report(cfg: &ScenarioConfig, axis: Option<SweepAxis>, rows: &[SweepRow], abort_on_any: bool) -> Report {
    let aborted = abort_on_any && rows.iter().any(SweepRow::is_aborted);
    Report {
        text: rows_csv(axis.map(SweepAxis::name), cfg.protocol.k, rows),
        aborted,
    }
}

fn run(cli: &Cli) -> Result<Report> {
    let mut cfg = match &cli.common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(v) = cli.common.variant {
        cfg.protocol.variant = v;
    }
    if let Some(b) = cli.common.basis {
        cfg.protocol.basis = b;
    }
    if let Some(seed) = cli.common.seed {
        cfg.mc.seed = seed;
    }
    cfg.validate()?;
    let report = match cli.command {
        Command::Decompose => {
            let profile = cfg.fixed_profile()?;
            let decomp = build_decomposition(&profile)?;
            Report {
                text: decomposition_csv(&profile, &decomp),
                aborted: false,
            }
        }
        Command::Keysize => row_report(&cfg, None, &[keysize(&cfg)?], true),
        Command::Optimize => row_report(&cfg, None, &[optimize_intensities(&cfg)?], true),
        Command::ScanDistance => row_report(&cfg, Some(SweepAxis::Distance), &scan_distance(&cfg)?, false),
        Command::ScanDelta => row_report(&cfg, Some(SweepAxis::Delta), &scan_delta(&cfg)?, false),
        Command::McValidate => {
            let report = mc_validate(&cfg)?;
            Report {
                text: report.to_text(),
                aborted: report.abort_dominated,
            }
        }
    };
    match cli.common.out.as_ref().or(cfg.output.path.as_ref()) {
        Some(path) => {
            std::fs::write(path, &report.text).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => print!("{}", report.text),
    }
    Ok(report)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidParameter(_)) => 2,
        Some(Error::Abort(_)) => 3,
        Some(_) => 4,
        // Output failures.
        None => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) if report.aborted => ExitCode::from(3),
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
