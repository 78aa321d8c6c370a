//! Command-line surface. Tunable flags are optional so that the layering in
//! [`crate::config`] can tell "explicitly set" apart from "defaulted".

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "nmoe",
    version,
    about = "Frozen-encoder ECG emotion classification: synth, preprocess, embed, train, and report"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Generate the synthetic five-class ECG dataset
    Synth(SynthArgs),
    /// High-pass filter and z-score every trial
    Preprocess(PreprocessArgs),
    /// Encode windows with the frozen backbone and cache every layer output
    Embed(EmbedArgs),
    /// Train the gated fusion head (k-fold CV plus a final model)
    Train(TrainArgs),
    /// Score a trained model on a split
    Eval(EvalArgs),
    /// Evaluate robustness across additive-noise SNR levels
    SweepNoise(SweepNoiseArgs),
    /// Compare gated fusion against the last layer alone
    Compare(CompareArgs),
    /// Report a trained model's gate weight profile
    ReportAlphas(ReportAlphasArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Directory to write trials and manifest.csv into
    #[arg(long)]
    pub out: PathBuf,
    /// Trials per class
    #[arg(long)]
    pub trials_per_class: Option<usize>,
    /// Trial duration in seconds
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Sampling rate in Hz
    #[arg(long)]
    pub fs: Option<f64>,
    /// Generator seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Dataset directory (or manifest.csv) to read
    #[arg(long)]
    pub data: PathBuf,
    /// Directory to write preprocessed trials into
    #[arg(long)]
    pub out: PathBuf,
    /// High-pass cutoff in Hz
    #[arg(long)]
    pub highpass_hz: Option<f64>,
    /// JSON config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct EmbedArgs {
    /// Preprocessed dataset directory to read
    #[arg(long)]
    pub data: PathBuf,
    /// Directory to write the embedding cache into
    #[arg(long)]
    pub out: PathBuf,
    /// Window length in samples
    #[arg(long)]
    pub window_len: Option<usize>,
    /// Window overlap in percent (0-99)
    #[arg(long)]
    pub overlap_pct: Option<u32>,
    /// Frozen backbone seed
    #[arg(long)]
    pub backbone_seed: Option<u64>,
    /// JSON config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Embedding cache directory
    #[arg(long)]
    pub emb: PathBuf,
    /// Directory to write model.ckpt and reports into
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Trial-level train fraction
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Cross-validation folds inside the train split
    #[arg(long)]
    pub folds: Option<usize>,
    /// Gating mode: static or conditioned
    #[arg(long)]
    pub gating: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Embedding cache directory
    #[arg(long)]
    pub emb: PathBuf,
    /// Trained checkpoint (model.ckpt)
    #[arg(long)]
    pub model: PathBuf,
    /// Directory to write metrics.csv into
    #[arg(long)]
    pub out: PathBuf,
    /// Which windows to score: train, test, or all
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Split seed (must match the training run)
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepNoiseArgs {
    /// Preprocessed dataset directory to read
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint (model.ckpt)
    #[arg(long)]
    pub model: PathBuf,
    /// Directory to write noise_sweep.csv into
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated SNR levels in dB
    #[arg(long)]
    pub snrs: Option<String>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub overlap_pct: Option<u32>,
    #[arg(long)]
    pub backbone_seed: Option<u64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Split seed (must match the training run)
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Embedding cache directory
    #[arg(long)]
    pub emb: PathBuf,
    /// Directory to write compare.txt into
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Gating mode of the fused arm: static or conditioned
    #[arg(long)]
    pub gating: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportAlphasArgs {
    /// Embedding cache directory
    #[arg(long)]
    pub emb: PathBuf,
    /// Trained checkpoint (model.ckpt)
    #[arg(long)]
    pub model: PathBuf,
    /// Directory to write alphas.csv and alphas.svg into
    #[arg(long)]
    pub out: PathBuf,
    /// Which windows to profile: train, test, or all
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Split seed (must match the training run)
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
}
