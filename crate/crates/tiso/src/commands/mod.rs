//! Subcommand drivers. Each reads its section of the configuration, writes
//! its artifacts into the output directory and returns the exit status.

use std::path::PathBuf;

use tiso_core::MaterialField;

use crate::config::{ExperimentConfig, EFFECTIVE_CONFIG};
use crate::error::{ExitStatus, Result, TisoError};
use crate::output::OutputDir;

pub mod audit;
pub mod convexity;
pub mod invert;
pub mod nondegen;
pub mod plot;
pub mod qsh;
pub mod trace;
pub mod verify;

/// A loaded configuration with its output directory.
pub struct Context {
    pub config: ExperimentConfig,
    /// Directory that relative paths inside the configuration refer to.
    pub base_dir: PathBuf,
    pub out: OutputDir,
}

impl Context {
    /// Create the output directory and echo the effective configuration.
    pub fn new(config: ExperimentConfig, base_dir: PathBuf) -> Result<Self> {
        let out_path = if config.output_dir.is_absolute() { config.output_dir.clone() } else { base_dir.join(&config.output_dir) };
        let out = OutputDir::create(&out_path)?;
        out.write_text(EFFECTIVE_CONFIG, &config.to_json())?;
        Ok(Context { config, base_dir, out })
    }

    pub fn material(&self) -> Result<MaterialField> {
        self.config.material.build(&self.base_dir, "material")
    }

    pub fn waves(&self) -> Result<Vec<tiso_core::Wave>> {
        if self.config.waves.is_empty() {
            return Err(TisoError::config("waves", "at least one wave is required"));
        }
        Ok(self.config.waves.iter().map(|&w| w.into()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Trace,
    Convexity,
    Nondegen,
    Audit,
    Invert,
    QshExtract,
    Verify,
    Plot,
}

pub fn run(cmd: Command, ctx: &Context) -> Result<ExitStatus> {
    match cmd {
        Command::Trace => trace::run(ctx),
        Command::Convexity => convexity::run(ctx),
        Command::Nondegen => nondegen::run(ctx),
        Command::Audit => audit::run(ctx),
        Command::Invert => invert::run(ctx),
        Command::QshExtract => qsh::run(ctx),
        Command::Verify => verify::run(ctx),
        Command::Plot => plot::run(ctx),
    }
}
