use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{PipelineConfig, RunArgs, DEFAULT_SEED, DEFAULT_TRIALS};

/// Caption translation reranking by target-side retrieval.
#[derive(Debug, Parser)]
#[command(name = "tsr", version)]
struct Cli {
    /// Worker threads for per-sentence work (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count document frequencies over a one-sentence-per-line corpus.
    ExtractIdf {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
    /// Ingest a caption collection and persist its index.
    BuildIndex {
        #[arg(long)]
        collection: PathBuf,
        #[arg(long, short = 'o')]
        out: PathBuf,
        #[arg(long)]
        skip_empty_captions: bool,
    },
    /// Retrieve matches for every sentence and write them to the output directory.
    Retrieve(RunArgs),
    /// Rerank k-best lists against a match dump.
    Rerank {
        #[command(flatten)]
        run: RunArgs,
        /// Match dump (default: `<output-dir>/matches.txt`).
        #[arg(long)]
        matches: Option<PathBuf>,
        /// Write per-sentence diagnostics.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Retrieval and reranking in one pass.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        diagnostics: bool,
    },
    /// Corpus BLEU of one output file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// BLEU of two systems and an approximate randomization p-value.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        name_a: Option<String>,
        #[arg(long)]
        name_b: Option<String>,
    },
    /// Step-wise hyperparameter search on a development set.
    Tune {
        #[command(flatten)]
        run: RunArgs,
        /// Grid file (TOML: k_n, k_m, k_r, lambda and optional d lists).
        #[arg(long)]
        grid: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::ExtractIdf { corpus, out } => commands::extract_idf(&corpus, &out),
        Command::BuildIndex {
            collection,
            out,
            skip_empty_captions,
        } => commands::build_index(&collection, &out, skip_empty_captions),
        Command::Retrieve(run) => commands::retrieve(&PipelineConfig::resolve(&run)?),
        Command::Rerank {
            run,
            matches,
            diagnostics,
        } => commands::rerank(&PipelineConfig::resolve(&run)?, matches.as_deref(), diagnostics),
        Command::Pipeline { run, diagnostics } => commands::pipeline(&PipelineConfig::resolve(&run)?, diagnostics),
        Command::Evaluate { hyp, reference } => commands::evaluate_cmd(&hyp, &reference),
        Command::Compare {
            a,
            b,
            reference,
            trials,
            seed,
            name_a,
            name_b,
        } => commands::compare(&a, &b, &reference, trials, seed, (name_a, name_b)),
        Command::Tune { run, grid } => commands::tune(&PipelineConfig::resolve(&run)?, grid.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
