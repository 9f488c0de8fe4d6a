//! Command-line driver wiring the pipeline stages together: synthetic data
//! generation, corpus ingestion, candidate generation, model training, and
//! ranking.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use kindred_core::features::Mode;
use kindred_core::ranking::DEFAULT_TOP_N;

use config::{PipelineConfig, DEFAULT_HOLDOUT_FRAC, DEFAULT_MIN_IMPRESSIONS};

#[derive(Debug, Parser)]
#[command(name = "kindred", version, about = "Item-to-item recommendation pipeline")]
pub struct Cli {
    /// TOML pipeline configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed propagated to every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Abort on the first malformed input record instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus plus engagement log and ground truth.
    Synth {
        /// Directory for the corpus files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate corpus files and print an ingest report.
    Ingest {
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build the board co-occurrence candidate index.
    Candgen {
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        /// Index output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the shared-board count histogram of an index as JSON.
    Stats {
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Mine triplets from an engagement log and fit a ranking model.
    Train {
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Pairs with fewer impressions are not scored.
        #[arg(long)]
        min_impressions: Option<u64>,
        /// Model output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank one query's candidates and print the list as JSON.
    Rank {
        #[arg(long)]
        query: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        /// Feature mode; defaults to the model's.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Rank every query in the index into a recommendations file.
    RankAll {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        /// Feature mode; defaults to the model's.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        top_n: Option<usize>,
        /// Recommendations output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score modes on a held-out triplet split.
    Eval {
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
        /// Modes to evaluate; defaults to all of them.
        #[arg(long)]
        modes: Vec<Mode>,
        #[arg(long)]
        min_impressions: Option<u64>,
        /// Fraction of queries held out for evaluation.
        #[arg(long)]
        holdout_frac: Option<f64>,
    },
}

fn require(flag: Option<PathBuf>, fallback: Option<&PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| fallback.cloned())
        .with_context(|| format!("--{name} is required (flag or config file)"))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("initializing worker pool")?;
    }

    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.propagate_seed(seed);
    }
    let seed = cfg.seed.unwrap_or(0);
    let strict = cli.strict;

    match cli.command {
        Command::Synth { out } => {
            let out = require(out, cfg.corpus_dir.as_ref(), "out")?;
            let summary = commands::run_synth(&cfg.synth, &cfg.candgen, &out)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Ingest { corpus_dir, report } => {
            let corpus_dir = require(corpus_dir, cfg.corpus_dir.as_ref(), "corpus-dir")?;
            let json = commands::run_ingest(&corpus_dir, strict, report.as_deref())?;
            println!("{json}");
        }
        Command::Candgen { corpus_dir, out } => {
            let corpus_dir = require(corpus_dir, cfg.corpus_dir.as_ref(), "corpus-dir")?;
            let out = require(out, cfg.index.as_ref(), "out")?;
            let queries = commands::run_candgen(&corpus_dir, &cfg.candgen, strict, &out)?;
            println!("{}", serde_json::json!({ "queries": queries }));
        }
        Command::Stats { index } => {
            let index = require(index, cfg.index.as_ref(), "index")?;
            println!("{}", commands::run_stats(&index)?);
        }
        Command::Train {
            corpus_dir,
            events,
            mode,
            min_impressions,
            out,
        } => {
            let corpus_dir = require(corpus_dir, cfg.corpus_dir.as_ref(), "corpus-dir")?;
            let events = require(events, cfg.events.as_ref(), "events")?;
            let out = require(out, cfg.model.as_ref(), "out")?;
            let summary = commands::run_train(
                &corpus_dir,
                &events,
                mode.or(cfg.mode).unwrap_or(Mode::Visual),
                min_impressions
                    .or(cfg.min_impressions)
                    .unwrap_or(DEFAULT_MIN_IMPRESSIONS),
                &cfg.hyperparams,
                seed,
                strict,
                &out,
            )?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Rank {
            query,
            model,
            index,
            corpus_dir,
            mode,
            top_n,
        } => {
            let model = require(model, cfg.model.as_ref(), "model")?;
            let index = require(index, cfg.index.as_ref(), "index")?;
            let corpus_dir = require(corpus_dir, cfg.corpus_dir.as_ref(), "corpus-dir")?;
            let json = commands::run_rank(
                &query,
                &model,
                &index,
                &corpus_dir,
                mode.or(cfg.mode),
                top_n.or(cfg.top_n).unwrap_or(DEFAULT_TOP_N),
                strict,
            )?;
            println!("{json}");
        }
        Command::RankAll {
            model,
            index,
            corpus_dir,
            mode,
            top_n,
            out,
        } => {
            let model = require(model, cfg.model.as_ref(), "model")?;
            let index = require(index, cfg.index.as_ref(), "index")?;
            let corpus_dir = require(corpus_dir, cfg.corpus_dir.as_ref(), "corpus-dir")?;
            let out = require(out, cfg.recommendations.as_ref(), "out")?;
            let header = commands::run_rank_all(
                &model,
                &index,
                &corpus_dir,
                mode.or(cfg.mode),
                top_n.or(cfg.top_n).unwrap_or(DEFAULT_TOP_N),
                strict,
                &out,
            )?;
            println!("{}", serde_json::to_string(&header)?);
        }
        Command::Eval {
            corpus_dir,
            events,
            modes,
            min_impressions,
            holdout_frac,
        } => {
            let corpus_dir = require(corpus_dir, cfg.corpus_dir.as_ref(), "corpus-dir")?;
            let events = require(events, cfg.events.as_ref(), "events")?;
            let modes = if modes.is_empty() {
                Mode::ALL.to_vec()
            } else {
                modes
            };
            let json = commands::run_eval(
                &corpus_dir,
                &events,
                &modes,
                min_impressions
                    .or(cfg.min_impressions)
                    .unwrap_or(DEFAULT_MIN_IMPRESSIONS),
                holdout_frac.or(cfg.holdout_frac).unwrap_or(DEFAULT_HOLDOUT_FRAC),
                &cfg.hyperparams,
                seed,
                strict,
            )?;
            println!("{json}");
        }
    }
    Ok(())
}
