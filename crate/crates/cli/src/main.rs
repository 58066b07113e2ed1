//! `earlynet`: train and probe early-exit networks from the shell.
//!
//! All behaviour is driven by a TOML config (see config.rs for the
//! schema and defaults); a handful of flags override the common knobs.
//! Subcommands write CSV artifacts into `--out` and exit nonzero on any
//! error, leaving no partial checkpoint behind.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "earlynet", version, about = "Early-exit network trainer and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; writes the checkpoint and a per-epoch log
    Train(CommonArgs),
    /// Expected accuracy of a checkpoint under head-weighting schemes
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated scheme list (default eq,lin,poly,ilin,ipoly,norm)
        #[arg(long)]
        schemes: Option<String>,
    },
    /// Per-head inference cost table (analytic MAC counts)
    Costs {
        #[command(flatten)]
        common: CommonArgs,
        /// Also record median wall-clock times (informational only)
        #[arg(long)]
        measure: bool,
    },
    /// Per-head accuracy curve plus confidence-cascade threshold sweeps
    Cascade(CommonArgs),
    /// Accuracy when inference is interrupted at a grid of times
    AnytimeSim(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run config; omit for the stock synthetic setup
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides [train] seed and everything derived from it
    #[arg(long)]
    seed: Option<u64>,
    /// 'synthetic', 'idx:<images>:<labels>' or a .csv path
    #[arg(long)]
    data: Option<String>,
    /// Checkpoint to write (train) or read (default <out>/net.ckpt)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory for CSV artifacts and the default checkpoint
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl CommonArgs {
    fn resolve(&self) -> Result<(RunConfig, PathBuf, PathBuf)> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.override_seed(self.seed);
        cfg.override_data(self.data.as_deref())?;
        let ckpt = self.checkpoint.clone().unwrap_or_else(|| self.out.join("net.ckpt"));
        Ok((cfg, self.out.clone(), ckpt))
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(common) => {
            let (cfg, out, ckpt) = common.resolve()?;
            commands::cmd_train(&cfg, &out, &ckpt)
        }
        Command::Eval { common, schemes } => {
            let (cfg, out, ckpt) = common.resolve()?;
            commands::cmd_eval(&cfg, &out, &ckpt, schemes.as_deref())
        }
        Command::Costs { common, measure } => {
            let (cfg, out, _) = common.resolve()?;
            commands::cmd_costs(&cfg, &out, common.checkpoint.as_deref(), measure)
        }
        Command::Cascade(common) => {
            let (cfg, out, ckpt) = common.resolve()?;
            commands::cmd_cascade(&cfg, &out, &ckpt)
        }
        Command::AnytimeSim(common) => {
            let (cfg, out, ckpt) = common.resolve()?;
            commands::cmd_anytime(&cfg, &out, &ckpt)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
