use std::path::PathBuf;

use cap_core::posthoc::PosthocMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cap", version, about = "Class-attribute priors: synthesis, fitting and evaluation runs")]
pub struct Cli {
    /// Worker threads; only cell-parallel sweeps use more than one.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Parse and validate configuration, then exit without computing.
    #[arg(long, global = true)]
    pub validate_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a long-tailed Gaussian dataset with optional label noise.
    Synth(SynthArgs),
    /// Train a toy model and export logits.
    Train(TrainArgs),
    /// Metrics of (optionally adjusted) logits.
    Eval(EvalArgs),
    /// Fit CAP weights on frozen validation logits.
    Posthoc(PosthocArgs),
    /// Bilevel CAP search followed by retraining.
    Bilevel(BilevelArgs),
    /// CS-SVM balanced error versus δ on Gaussian mixtures.
    GmmSweep(GmmSweepArgs),
    /// Replay a run from its manifest and verify its outputs.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    L,
    Delta,
    Both,
}

impl From<ModeArg> for PosthocMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::L => PosthocMode::Additive,
            ModeArg::Delta => PosthocMode::Multiplicative,
            ModeArg::Both => PosthocMode::Both,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON document, inline or as a path.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub train: PathBuf,
    /// Dataset CSVs to export logits for.
    #[arg(long)]
    pub predict: Vec<PathBuf>,
    /// Training configuration JSON (bilevel schema; search fields unused).
    #[arg(long)]
    pub config: Option<String>,
    /// Loss strategies JSON; plain cross-entropy when absent.
    #[arg(long)]
    pub strategies: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub logits: PathBuf,
    /// Strategies JSON applied post hoc before prediction.
    #[arg(long)]
    pub strategies: Option<String>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// Per-class test weights for the weighted metric, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Attribute CSV to extend with the measured `diff` column.
    #[arg(long, requires = "attrs_out")]
    pub attrs_in: Option<PathBuf>,
    /// Write an attribute CSV whose `diff` column holds the class errors.
    #[arg(long)]
    pub attrs_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PosthocArgs {
    /// Labelled validation logits CSV.
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub attrs: PathBuf,
    /// Objective JSON, inline or as a path.
    #[arg(long)]
    pub objective: String,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Basis JSON; the default five-function basis when absent.
    #[arg(long)]
    pub basis: Option<String>,
    /// Keep the last iterate instead of the best one.
    #[arg(long)]
    pub last_iterate: bool,
    /// Labelled logits to report metrics on before and after adjustment.
    #[arg(long)]
    pub test_logits: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BilevelArgs {
    /// Dataset CSV, or a synth configuration JSON (`.json`).
    #[arg(long)]
    pub data: PathBuf,
    /// Test dataset CSV; required with a CSV `--data`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value = "freq+diff")]
    pub attrs: String,
    #[arg(long)]
    pub objective: String,
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub basis: Option<String>,
    /// Also retrain with plain cross-entropy and report its test metrics.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GmmSweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2])]
    pub pi: Vec<f64>,
    /// Values of σ₊/σ₋ with σ₋ = 1.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 1.0, 1.2])]
    pub sigma_ratio_grid: Vec<f64>,
    /// Dimension over sample size, `d = round(dbar · n)`.
    #[arg(long, default_value_t = 2.0)]
    pub dbar: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2.0)]
    pub mu_norm: f64,
    /// `lo:hi:count` (log spaced) or a comma-separated list.
    #[arg(long, default_value = "0.5:8:30")]
    pub delta_grid: String,
    /// A seed count `n` (seeds `s..s+n` for `--seed s`) or a comma-separated list.
    #[arg(long, default_value = "10")]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
