//! Command-line driver: dataset generation and import, training, evaluation,
//! analysis and message-size sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::UsageError;

#[derive(Parser)]
#[command(name = "refgame", version, about = "Multi-step referential game between a sender and a receiver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a spec file.
    GenData(GenDataArgs),
    /// Build a dataset from descriptions, word embeddings and image features.
    ImportData(ImportArgs),
    /// Train both agents and write the best checkpoint and the epoch log.
    Train(TrainArgs),
    /// Play a split with a trained checkpoint and report accuracy.
    Eval(EvalArgs),
    /// Turn episode logs into report tables.
    Analyze(AnalyzeArgs),
    /// Train one model per message size and compare held-out accuracy.
    Sweep(SweepArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// JSON spec; omitted keys take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spec override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct ImportArgs {
    /// `class_name<TAB>tokens` per line.
    #[arg(long)]
    pub descriptions: PathBuf,
    /// `token v1 ... vN` per line.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// `class_name<TAB>v1 ... vD` per sender view.
    #[arg(long)]
    pub features: PathBuf,
    /// Optional `class_name<TAB>score` per line.
    #[arg(long)]
    pub difficulty: Option<PathBuf>,
    /// Classes kept out of training for the out-of-domain split.
    #[arg(long, value_delimiter = ',')]
    pub held_out: Vec<String>,
    /// Classes of a different category for the transfer split.
    #[arg(long, value_delimiter = ',')]
    pub transfer: Vec<String>,
    #[arg(long, default_value_t = 550)]
    pub train_views: usize,
    #[arg(long, default_value_t = 50)]
    pub val_views: usize,
    #[arg(long, default_value_t = 20)]
    pub test_views: usize,
    #[arg(long, default_value_t = 100)]
    pub held_out_views: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Flat JSON training configuration; may also name `data` and `out`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub message_dim: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// `both-agents-update` or `only-receiver-update`.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_updates: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Configuration override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Explicit K; defaults to `round(k_fraction * candidates)`.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub k_fraction: f64,
    /// Defaults to the value the checkpoint was trained with.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Play each view this many times with sampled actions instead of greedily.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Episode JSON-lines files.
    #[arg(long, required = true, num_args = 1..)]
    pub episodes: Vec<PathBuf>,
    /// Dataset whose per-class difficulty scores are correlated with length.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Defaults to the largest cap recorded in the logs.
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub k_fraction: f64,
    /// Training output directories to summarise across seeds.
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Training logs to merge into learning curves, `condition=path`.
    #[arg(long = "curve", value_name = "NAME=CSV")]
    pub curves: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, required = true, value_delimiter = ',')]
    pub dims: Vec<usize>,
    /// Defaults to the configured seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "test")]
    pub in_domain_split: String,
    #[arg(long, default_value = "ood")]
    pub held_out_split: String,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::ImportData(a) => commands::import_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
