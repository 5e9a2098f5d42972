use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use confspec::commands::{run, Command, RunOptions};
use confspec::config::RunConfig;
use confspec::Error;

/// Spectra of conformally covariant operators under conformal deformation.
#[derive(Parser)]
#[command(name = "confspec", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write SVG branch diagrams.
    #[arg(long, global = true)]
    emit_plots: bool,
    /// Step limit for the genericity loop.
    #[arg(long, global = true)]
    max_steps: Option<usize>,
    /// Seed for randomized probes.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Background spectrum and eigenvalue clusters.
    Spectrum,
    /// Branch tracking, slope comparison and growth-bound report.
    Track,
    /// Genericity loop: split every degenerate window eigenvalue.
    Split,
    /// Rigidity scores of the degenerate clusters.
    Rigidity,
    /// Window counts, crossings and the continuity envelope.
    Windows,
    /// Run the full verification battery.
    Verify,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Spectrum => Command::Spectrum,
            Cmd::Track => Command::Track,
            Cmd::Split => Command::Split,
            Cmd::Rigidity => Command::Rigidity,
            Cmd::Windows => Command::Windows,
            Cmd::Verify => Command::Verify,
        }
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("CONFSPEC_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CONFSPEC_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}

fn main_inner(cli: Cli) -> Result<i32, Error> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.max_steps {
        cfg.max_steps = n;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let opts = RunOptions { emit_plots: cli.emit_plots, ..RunOptions::from_config(&cfg) };
    let report = run(cli.command.into(), &cfg, &opts)?;
    for line in &report.summary {
        println!("{line}");
    }
    for file in &report.files {
        println!("wrote {}", file.display());
    }
    Ok(report.status.exit_code())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
