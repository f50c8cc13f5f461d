//! `videodpo` command line interface.
//!
//! Every stage reads and writes explicit files so stages can be run and
//! checked independently. Exit codes: 0 success, 2 input or validation
//! error, 3 internal invariant violation.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::pairing::PairingStrategy;
use crate::reweight::{BetaMode, DEFAULT_BIN_WIDTH};
use crate::Error;

pub use commands::{run, StageError};

#[derive(Debug, Parser)]
#[command(
    name = "videodpo",
    version,
    about = "OmniScore preference-pair pipeline and toy DPO trainer"
)]
pub struct Cli {
    /// key=value file overriding OmniScore weights and normalisation ranges.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Suppress summaries on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalise raw scores and compute OmniScores.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build preference pairs from a scored file.
    Pair {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        pairing: PairingArgs,
    },
    /// Attach histogram-based weights to a pair file.
    Reweight {
        /// Scored file holding every sample the pairs were drawn from.
        #[arg(long)]
        scored: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        histogram_out: Option<PathBuf>,
    },
    /// score -> pair -> reweight in one run.
    Pipeline(PipelineArgs),
    /// Dataset analyses as CSV: gap vs N, histograms, correlations.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_parser = parse_strategy, default_value = "best_vs_worst")]
        strategy: PairingStrategy,
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin_width: f64,
        /// Random orderings per prompt for the gap-vs-N table.
        #[arg(long, default_value_t = 32)]
        draws: usize,
    },
    /// Pre-train the toy denoiser, then run preference training on it.
    TrainToy(TrainToyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PairingArgs {
    #[arg(long, value_parser = parse_strategy, default_value = "best_vs_worst")]
    pub strategy: PairingStrategy,
    /// Fraction of smallest-gap pairs to drop, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub drop_ratio: f64,
}

#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    #[arg(long, default_value_t = 0.72)]
    pub alpha: f64,
    /// A positive constant, or `max` for the most frequent bin's frequency.
    #[arg(long, value_parser = parse_beta, default_value = "1.0")]
    pub beta: BetaMode,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    pub bin_width: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Weighted pair file.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub pairing: PairingArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Require exactly this many videos per prompt (at least 2).
    #[arg(long)]
    pub samples_per_prompt: Option<usize>,
    #[arg(long)]
    pub scored_out: Option<PathBuf>,
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
    #[arg(long)]
    pub histogram_out: Option<PathBuf>,
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Difference,
    Sigmoid,
}

#[derive(Debug, Clone, Args)]
pub struct TrainToyArgs {
    /// Weighted pair file; synthetic pairs are generated when omitted.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sigmoid")]
    pub mode: ModeArg,
    /// Use the pair file's weights (`on`) or unit weights (`off`).
    #[arg(long, value_enum, default_value = "on")]
    pub alpha_weights: Switch,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 2.0)]
    pub dpo_beta: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1500)]
    pub pretrain_steps: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
    /// CSV with columns step,loss,margin.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<PairingStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_beta(s: &str) -> Result<BetaMode, String> {
    if s == "max" {
        return Ok(BetaMode::MaxBinFrequency);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| format!("expected a number or `max`, got {s:?}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(BetaMode::Constant(v))
    } else {
        Err(format!("beta must be positive, got {v}"))
    }
}

/// Parses the process arguments, runs the command and returns the exit
/// code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("videodpo: {e}");
            if e.source.is_internal() {
                3
            } else {
                2
            }
        }
    }
}
