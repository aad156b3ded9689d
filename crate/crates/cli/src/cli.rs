use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::report::ScoreMode;

/// Infrared and visible image fusion.
#[derive(Debug, Parser)]
#[command(name = "irfusion", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse one visible/infrared pair.
    Fuse {
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score fused images against their sources and write a CSV report.
    Eval {
        /// Directory with `vis/` and `ir/` subdirectories.
        #[arg(long)]
        pairs: PathBuf,
        /// Directory of fused images named like the pairs.
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Window stride.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, value_enum, default_value_t = ScoreMode::Luminance)]
        mode: ScoreMode,
    },
    /// Train a network from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to continue from; overrides `resume` in the config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Time the network on random inputs.
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
}
