use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tiso::commands::{self, Command, Context};
use tiso::config::ExperimentConfig;
use tiso::error::{ExitStatus, Result};

/// Travel-time experiments for transversely isotropic media.
///
/// Exit codes: 0 pass, 1 property failure, 2 configuration error,
/// 3 numerical failure. The thread count is read from TISO_THREADS.
#[derive(Parser)]
#[command(name = "tiso", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; omitted entries take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` in the configuration.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Shoot the configured ray fan and archive the lens relation.
    Trace(Common),
    /// Check convexity of the foliation along tangent rays.
    Convexity(Common),
    /// Check invertibility of the Hamilton map at tangent covectors.
    Nondegen(Common),
    /// Standard and boundary symbol audits.
    Audit(Common),
    /// Synthetic recovery under the artificial boundary.
    Invert(Common),
    /// qSH metric extraction and adapted coordinates.
    QshExtract(Common),
    /// Run the acceptance battery.
    Verify(Common),
    /// Emit CSV data for plots.
    Plot(Common),
    /// Print the default configuration.
    Defaults,
}

fn load(c: &Common) -> Result<Context> {
    let (mut config, base) = match &c.config {
        Some(p) => {
            let base = p.parent().map(|d| d.to_path_buf()).unwrap_or_default();
            (ExperimentConfig::load(p)?, base)
        }
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(o) = &c.out {
        // an explicit output directory is taken relative to the working directory
        config.output_dir = std::path::absolute(o).unwrap_or_else(|_| o.clone());
    }
    // fail on a bad thread count before any work is done
    tiso::par::thread_count()?;
    Context::new(config, base)
}

fn run(cli: Cli) -> Result<ExitStatus> {
    let (cmd, common) = match &cli.command {
        Cmd::Trace(c) => (Command::Trace, c),
        Cmd::Convexity(c) => (Command::Convexity, c),
        Cmd::Nondegen(c) => (Command::Nondegen, c),
        Cmd::Audit(c) => (Command::Audit, c),
        Cmd::Invert(c) => (Command::Invert, c),
        Cmd::QshExtract(c) => (Command::QshExtract, c),
        Cmd::Verify(c) => (Command::Verify, c),
        Cmd::Plot(c) => (Command::Plot, c),
        Cmd::Defaults => {
            print!("{}", ExperimentConfig::default().to_json());
            return Ok(ExitStatus::Pass);
        }
    };
    let ctx = load(common)?;
    commands::run(cmd, &ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match run(cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("tiso: {e}");
            e.status()
        }
    };
    ExitCode::from(status.code() as u8)
}
