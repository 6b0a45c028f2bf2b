//! Experiments, file formats and the command-line driver around `tiso-core`.
//!
//! Every subcommand reads one JSON [`config::ExperimentConfig`], writes its
//! artifacts into the configured output directory and maps its verdict to
//! an [`error::ExitStatus`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod battery;
pub mod commands;
pub mod config;
pub mod error;
pub mod model;
pub mod output;
pub mod par;
pub mod recovery;
