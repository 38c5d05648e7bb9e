//! File formats, configuration and commands of the `crossdepict` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{Overrides, Profile, RunConfig};
use error::{exit, Result};

#[derive(Debug, Parser)]
#[command(name = "crossdepict", version, about = "Leave-one-domain-out benchmarks for domain generalization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,

    /// Benchmark worker threads (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Base seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured dataset as a manifest and data files.
    GenData,
    /// Train one method with one held-out domain.
    Train,
    /// Run every configured method on every held-out domain and seed.
    Bench,
    /// Domain-shift statistics and class-centre projection.
    Analyze,
}

impl Cli {
    pub fn resolved_config(&self) -> Result<RunConfig> {
        let config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        config.resolve(&Overrides {
            out: self.out.clone(),
            profile: self.profile,
            seed: self.seed,
            workers: self.workers,
        })
    }

    /// Executes the command, printing results to stdout and errors to
    /// stderr; returns the process exit code.
    pub fn run(&self) -> i32 {
        match self.execute() {
            Ok(text) => {
                print!("{text}");
                exit::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        }
    }

    fn execute(&self) -> Result<String> {
        let config = self.resolved_config()?;
        Ok(match self.command {
            Command::GenData => {
                let g = commands::gen_data(&config)?;
                format!("{}\nmanifest written to {}\n", g.counts, g.manifest.display())
            }
            Command::Train => format!("{}\n", commands::train(&config)?.line()),
            Command::Bench => commands::bench(&config)?.to_text(),
            Command::Analyze => commands::analyze(&config)?.summary(),
        })
    }
}
