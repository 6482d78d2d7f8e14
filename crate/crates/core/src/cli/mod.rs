//! Command-line front end.
//!
//! Every subcommand is reproducible: episode sampling and clustering seeds all
//! derive from `--seed`, and outputs are written by a single collector after
//! the episode workers finish.

mod commands;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::episodes::SynthConfig;
use crate::matching::MatchMode;

pub use commands::{
    cmd_evaluate, cmd_gridsearch, cmd_heuristics, cmd_oracle, cmd_segment, cmd_synth, CmdOutcome,
    UsageError,
};

#[derive(Debug, Parser)]
#[command(
    name = "protoseg",
    version,
    about = "Few-shot segmentation over frozen per-layer features"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment sampled episodes; write predicted masks and per-episode mIoU.
    Segment(RunConfig),
    /// Score previously written predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Per-layer mIoU, oracle layer selection and the last-layer gap.
    Oracle(RunConfig),
    /// Heuristic table: one row per (episode, layer).
    Heuristics(RunConfig),
    /// Exhaustive weight search over a heuristic table.
    Gridsearch(GridArgs),
    /// Write a synthetic dataset (features, masks, manifest).
    Synth(SynthArgs),
}

/// Which backbone layers to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelector {
    Index(usize),
    Last,
    All,
}

impl LayerSelector {
    /// Concrete 1-based layers for a stack with `count` layers.
    pub fn resolve(self, count: usize) -> Result<Vec<usize>, String> {
        match self {
            LayerSelector::Last => Ok(vec![count]),
            LayerSelector::All => Ok((1..=count).collect()),
            LayerSelector::Index(i) if (1..=count).contains(&i) => Ok(vec![i]),
            LayerSelector::Index(i) => Err(format!("layer {i} outside 1..={count}")),
        }
    }
}

impl FromStr for LayerSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "last" => Ok(Self::Last),
            "all" => Ok(Self::All),
            n => n
                .parse::<usize>()
                .ok()
                .filter(|&i| i >= 1)
                .map(Self::Index)
                .ok_or_else(|| {
                    format!("expected a layer index >= 1, \"last\" or \"all\", got {n:?}")
                }),
        }
    }
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Index(i) => write!(f, "{i}"),
            Self::Last => f.write_str("last"),
            Self::All => f.write_str("all"),
        }
    }
}

fn parse_mode(s: &str) -> Result<MatchMode, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n_way: usize,
    #[arg(long, default_value_t = 1)]
    pub k_shot: usize,
    /// Number of episodes to sample.
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Prototypes per class.
    #[arg(long, default_value_t = 5)]
    pub n_clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub mask_threshold: f64,
    /// Layer index (1-based), "last" or "all".
    #[arg(long, default_value = "last")]
    pub layer: LayerSelector,
    /// combined, prototype_only or gram_only.
    #[arg(long, default_value = "combined", value_parser = parse_mode)]
    pub mode: MatchMode,
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Episode worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory written by `segment` (holds episodes.json and predictions/).
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
    /// Layer whose predictions to score; "last" reads the stack depth from the manifest.
    #[arg(long, default_value = "last")]
    pub layer: LayerSelector,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Heuristic table written by `heuristics`.
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    /// miou (mean selected-layer mIoU) or agreement (oracle-layer hit rate).
    #[arg(long, default_value = "miou")]
    pub objective: String,
    /// Comma-separated heuristics to weight; all six by default.
    #[arg(long, value_delimiter = ',')]
    pub heuristics: Vec<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "synth")]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    /// Foreground classes in the dataset.
    #[arg(long, default_value_t = 2)]
    pub n_way: usize,
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 16)]
    pub h: usize,
    #[arg(long, default_value_t = 16)]
    pub w: usize,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Least noisy layer; defaults to the last.
    #[arg(long)]
    pub peak_layer: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub off_peak_sigma: f64,
    #[arg(long, default_value_t = 4)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub registers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            n_way: self.n_way,
            k_shot: 1,
            layers: self.layers,
            h: self.h,
            w: self.w,
            d: self.d,
            noise_sigma: self.noise_sigma,
            peak_layer: self.peak_layer.unwrap_or(self.layers),
            seed: self.seed,
            patch_size: self.patch_size,
            off_peak_sigma: self.off_peak_sigma,
            registers: self.registers,
        }
    }
}

/// Runs a parsed command, printing reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> anyhow::Result<CmdOutcome> {
    match &cli.command {
        Command::Segment(cfg) => cmd_segment(cfg, out),
        Command::Evaluate(args) => cmd_evaluate(args, out),
        Command::Oracle(cfg) => cmd_oracle(cfg, out),
        Command::Heuristics(cfg) => cmd_heuristics(cfg, out),
        Command::Gridsearch(args) => cmd_gridsearch(args, out),
        Command::Synth(args) => cmd_synth(args, out),
    }
}
