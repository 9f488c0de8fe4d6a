//! One function per pipeline stage, taking fully resolved arguments so the
//! stages stay testable without argument parsing.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Context;
use kindred_core::candgen::{
    cooccurrence_histogram, generate_candidates, load_index, write_index, GenConfig,
};
use kindred_core::corpus::{build_pinjoins, ingest, write_dir, ImageSig, IngestPaths, PinJoinSet};
use kindred_core::features::{query_dominance, Featurizer, Mode};
use kindred_core::ranking::{rank, rank_all, write_recommendations, RecommendationsHeader};
use kindred_core::synth::{generate_corpus, generate_engagement, write_ground_truth, SynthConfig};
use kindred_core::training::{
    compute_coec, mine_triplets, pairwise_accuracy, read_events, split_by_query, train,
    train_full_batch, write_events, Hyperparams, RankModel, Triplet,
};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub images: usize,
    pub boards: usize,
    pub pins: usize,
    pub events: usize,
    pub ground_truth_pairs: usize,
}

/// Generates the corpus plus an engagement log sampled over the same
/// candidate index a later candgen run will rebuild from the files.
pub fn run_synth(
    synth_config: &SynthConfig,
    gen_config: &GenConfig,
    out: &Path,
) -> anyhow::Result<SynthSummary> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let corpus = generate_corpus(synth_config)?;
    write_dir(&corpus, out)?;

    let pinjoins = build_pinjoins(&corpus);
    let index = generate_candidates(&corpus.boards, &pinjoins, gen_config)?;
    let (events, truth) = generate_engagement(&pinjoins, &index, synth_config)?;
    write_events(&out.join("events.jsonl"), &events)?;
    write_ground_truth(&out.join("ground_truth.jsonl"), &truth)?;

    Ok(SynthSummary {
        images: corpus.embeddings.len(),
        boards: corpus.boards.len(),
        pins: corpus.pins.len(),
        events: events.len(),
        ground_truth_pairs: truth.len(),
    })
}

fn load_pinjoins(corpus_dir: &Path, strict: bool) -> anyhow::Result<(PinJoinSet, kindred_core::corpus::Ingested)> {
    let ingested = ingest(&IngestPaths::in_dir(corpus_dir), strict)?;
    let pinjoins = build_pinjoins(&ingested.corpus);
    Ok((pinjoins, ingested))
}

/// Validates corpus files; returns the report as pretty JSON.
pub fn run_ingest(
    corpus_dir: &Path,
    strict: bool,
    report_path: Option<&Path>,
) -> anyhow::Result<String> {
    let ingested = ingest(&IngestPaths::in_dir(corpus_dir), strict)?;
    let json = serde_json::to_string_pretty(&ingested.report)?;
    if let Some(path) = report_path {
        std::fs::write(path, format!("{json}\n"))
            .with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(json)
}

pub fn run_candgen(
    corpus_dir: &Path,
    gen_config: &GenConfig,
    strict: bool,
    out: &Path,
) -> anyhow::Result<usize> {
    let (pinjoins, ingested) = load_pinjoins(corpus_dir, strict)?;
    let index = generate_candidates(&ingested.corpus.boards, &pinjoins, gen_config)?;
    write_index(&index, out)?;
    Ok(index.entries.len())
}

/// Shared-board count histogram of an index file, as pretty JSON.
pub fn run_stats(index_path: &Path) -> anyhow::Result<String> {
    let index = load_index(index_path)?;
    let histogram = cooccurrence_histogram(&index);
    Ok(serde_json::to_string_pretty(&histogram)?)
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub triplets: usize,
    pub scored_pairs: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn run_train(
    corpus_dir: &Path,
    events_path: &Path,
    mode: Mode,
    min_impressions: u64,
    hyperparams: &Hyperparams,
    mining_seed: u64,
    strict: bool,
    out: &Path,
) -> anyhow::Result<TrainSummary> {
    let (pinjoins, _) = load_pinjoins(corpus_dir, strict)?;
    let events = read_events(events_path)?;
    let coec = compute_coec(&events, min_impressions);
    let triplets = mine_triplets(&coec, &pinjoins, mining_seed);
    let featurizer = Featurizer::new(&pinjoins, mode);
    let model = train(&triplets, &featurizer, hyperparams)?;
    model.save(out)?;
    Ok(TrainSummary {
        mode,
        triplets: triplets.len(),
        scored_pairs: coec.scores.len(),
    })
}

pub fn run_rank(
    query: &str,
    model_path: &Path,
    index_path: &Path,
    corpus_dir: &Path,
    mode: Option<Mode>,
    top_n: usize,
    strict: bool,
) -> anyhow::Result<String> {
    let model = RankModel::load(model_path)?;
    let index = load_index(index_path)?;
    let (pinjoins, _) = load_pinjoins(corpus_dir, strict)?;
    let mode = mode.unwrap_or(model.mode);
    let list = rank(&ImageSig::new(query), &index, &pinjoins, &model, mode, top_n)?;
    Ok(serde_json::to_string_pretty(&list)?)
}

#[allow(clippy::too_many_arguments)]
pub fn run_rank_all(
    model_path: &Path,
    index_path: &Path,
    corpus_dir: &Path,
    mode: Option<Mode>,
    top_n: usize,
    strict: bool,
    out: &Path,
) -> anyhow::Result<RecommendationsHeader> {
    let model = RankModel::load(model_path)?;
    let index = load_index(index_path)?;
    let (pinjoins, _) = load_pinjoins(corpus_dir, strict)?;
    let mode = mode.unwrap_or(model.mode);
    let outcome = rank_all(&index, &pinjoins, &model, mode, top_n)?;
    write_recommendations(&outcome, mode, top_n, out)?;
    Ok(RecommendationsHeader {
        mode,
        top_n,
        queries: outcome.lists.len(),
        skipped: outcome.skipped.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeEval {
    pub mode: Mode,
    pub accuracy: f64,
    pub holdout_triplets: usize,
    /// Accuracy restricted to triplets whose query has a dominant object;
    /// absent when the holdout has none.
    pub dominant_accuracy: Option<f64>,
    pub dominant_triplets: usize,
}

/// Trains each mode on the same query-level split and scores it on the
/// held-out triplets. Uses the deterministic full-batch solver so mode
/// comparisons reflect feature expressiveness, not stochastic training
/// noise.
pub fn eval_modes(
    pinjoins: &PinJoinSet,
    train_set: &[Triplet],
    holdout: &[Triplet],
    modes: &[Mode],
    hyperparams: &Hyperparams,
) -> anyhow::Result<Vec<ModeEval>> {
    let dominant_queries: BTreeSet<&ImageSig> = pinjoins
        .iter()
        .filter(|j| query_dominance(j))
        .map(|j| &j.image)
        .collect();
    let dominant_holdout: Vec<Triplet> = holdout
        .iter()
        .filter(|t| dominant_queries.contains(&t.query))
        .cloned()
        .collect();

    let mut evals = Vec::with_capacity(modes.len());
    for &mode in modes {
        let featurizer = Featurizer::new(pinjoins, mode);
        let (model, _) = train_full_batch(train_set, &featurizer, hyperparams)?;
        let accuracy = pairwise_accuracy(&model, holdout, &featurizer)?;
        let dominant_accuracy = if dominant_holdout.is_empty() {
            None
        } else {
            Some(pairwise_accuracy(&model, &dominant_holdout, &featurizer)?)
        };
        evals.push(ModeEval {
            mode,
            accuracy,
            holdout_triplets: holdout.len(),
            dominant_accuracy,
            dominant_triplets: dominant_holdout.len(),
        });
    }
    Ok(evals)
}

#[allow(clippy::too_many_arguments)]
pub fn run_eval(
    corpus_dir: &Path,
    events_path: &Path,
    modes: &[Mode],
    min_impressions: u64,
    holdout_frac: f64,
    hyperparams: &Hyperparams,
    seed: u64,
    strict: bool,
) -> anyhow::Result<String> {
    let (pinjoins, _) = load_pinjoins(corpus_dir, strict)?;
    let events = read_events(events_path)?;
    let coec = compute_coec(&events, min_impressions);
    let triplets = mine_triplets(&coec, &pinjoins, seed);
    let (train_set, holdout) = split_by_query(&triplets, holdout_frac, seed);
    anyhow::ensure!(
        !train_set.is_empty() && !holdout.is_empty(),
        "triplet split left an empty side ({} train, {} holdout)",
        train_set.len(),
        holdout.len()
    );
    let evals = eval_modes(&pinjoins, &train_set, &holdout, modes, hyperparams)?;
    Ok(serde_json::to_string_pretty(&evals)?)
}
