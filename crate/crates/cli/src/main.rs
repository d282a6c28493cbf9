use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scenetext_core::evaluation::TokenBudget;
use scenetext_core::fusion::FusionMode;

mod commands;
mod manifest;
mod plot;

/// Scene-text aware video retrieval: generate corpora, train, evaluate, search.
#[derive(Parser, Debug)]
#[command(name = "scenetext", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus with planted OCR words.
    Generate {
        /// Generator config (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corpus root to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, trace.csv and a manifest.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Run config (TOML with optional [model] and [train] tables).
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        select: Selection,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-split retrieval metrics for a checkpoint.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        select: Selection,
        /// Directory for metrics.csv and the manifest [default: checkpoint directory].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every mode and token budget from one config.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated budgets for the fusion rows.
        #[arg(long, value_delimiter = ',', default_value = "10,20,all")]
        budgets: Vec<TokenBudget>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus statistics as JSON, optionally with histogram plots.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory [default: corpus root].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write PNG histograms.
        #[arg(long)]
        plot: bool,
    },
    /// Embed every video of a corpus into a searchable index file.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        select: Selection,
        /// Index file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank indexed videos for a sentence query.
    Search {
        #[arg(long)]
        index: PathBuf,
        /// Checkpoint used to encode the query [default: model.ckpt next to the index].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Args, Debug, Clone, Copy)]
pub struct Selection {
    /// vision, text or fusion.
    #[arg(long)]
    pub mode: Option<FusionMode>,
    /// OCR tracks kept per video: an integer or `all`.
    #[arg(long)]
    pub topk: Option<TokenBudget>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_or_validation() { 2 } else { 1 })
        }
    }
}
