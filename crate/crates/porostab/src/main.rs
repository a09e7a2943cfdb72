use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use porostab::{parse_config_str, run, Command};

#[derive(Parser)]
#[command(version, about = "Stabilized Q1-P0 poromechanics simulations and spectral analyses")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// March the problem in time; writes diagnostics.csv and snapshots.
    Simulate(RunArgs),
    /// Patch and scaled Schur-complement spectra; writes spectrum.csv.
    Analyze(RunArgs),
    /// Spectrum and Krylov count over a list of c = τ/τ*; writes sweep.csv.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stabilization ratio c = τ/τ*, overriding the [stabilization] table.
    #[arg(long)]
    c: Option<f64>,
    /// Cells per side, overriding problem.mesh_n.
    #[arg(long)]
    mesh_n: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match try_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main() -> Result<bool> {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        CliCommand::Simulate(a) => (Command::Simulate, a),
        CliCommand::Analyze(a) => (Command::Analyze, a),
        CliCommand::Sweep(a) => (Command::Sweep, a),
    };
    let text =
        std::fs::read_to_string(&args.config).with_context(|| format!("cannot read {}", args.config.display()))?;
    let mut config = parse_config_str(&text)
        .with_context(|| format!("invalid configuration {}", args.config.display()))?
        .with_overrides(args.c, args.mesh_n)?;
    if let Some(out) = args.out {
        config.output.dir = out;
    }
    log::info!("configuration: {config:?}");
    let summary = run(command, &config, &text)?;
    if let Some(f) = &summary.failure {
        eprintln!("run failed at step {} (t = {}): {}", f.step, f.time, f.reason);
    }
    Ok(summary.succeeded())
}
