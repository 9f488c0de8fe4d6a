//! Re-ranks candidate sets with a trained model and materializes
//! recommendation lists.
//!
//! Scoring is pure; `rank_all` shards queries across the rayon pool and
//! still emits lists in query order, so parallel runs are byte-identical
//! to serial ones.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candgen::{fallback_candidates, CandidateEntry, CandidateIndex};
use crate::corpus::{ImageSig, PinJoinSet};
use crate::features::{FeatureVector, Featurizer, Mode};
use crate::jsonl::JsonlWriter;
use crate::training::RankModel;
use crate::{Error, Result};

/// Results per page when the caller does not say otherwise.
pub const DEFAULT_TOP_N: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub image: ImageSig,
    pub score: f64,
}

/// Final recommendations for one query: scores non-increasing, ties broken
/// by image ascending, query itself excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: ImageSig,
    pub mode: Mode,
    pub results: Vec<RankedResult>,
}

/// First line of recommendations.jsonl; written even when there are no
/// queries so an empty run still produces a parseable file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationsHeader {
    pub mode: Mode,
    pub top_n: usize,
    pub queries: usize,
    pub skipped: usize,
}

/// Batch ranking output plus the queries that could not be ranked.
#[derive(Debug, Clone, PartialEq)]
pub struct RankAllOutcome {
    pub lists: Vec<RankedList>,
    /// (query, reason) pairs, in query order.
    pub skipped: Vec<(ImageSig, String)>,
}

/// Dot product of the model weights with the standardized feature values.
pub fn score(model: &RankModel, features: &FeatureVector) -> Result<f64> {
    model.score(features)
}

/// Candidate list for one query: the index entry when present, otherwise
/// nearest neighbors by binary code. A query absent from the index with no
/// usable embedding is unrankable.
fn candidates_for(
    query: &ImageSig,
    index: &CandidateIndex,
    pinjoins: &PinJoinSet,
) -> Result<Vec<CandidateEntry>> {
    if let Some(entries) = index.get(query) {
        return Ok(entries.to_vec());
    }
    fallback_candidates(query, pinjoins, index.params.fallback_k).map_err(|e| match e {
        Error::UnknownImage(_) | Error::NoVisual(_) => Error::UnrankableQuery(query.clone()),
        other => other,
    })
}

fn rank_prepared(
    query: &ImageSig,
    index: &CandidateIndex,
    pinjoins: &PinJoinSet,
    featurizer: &Featurizer,
    model: &RankModel,
    top_n: usize,
) -> Result<RankedList> {
    let entries = candidates_for(query, index, pinjoins)?;
    let ctx = featurizer
        .query_context(query)
        .map_err(|_| Error::UnrankableQuery(query.clone()))?;

    let mut results = Vec::with_capacity(entries.len());
    for entry in &entries {
        // stale index entries for images no longer in the corpus are dropped
        if entry.image == *query || !pinjoins.contains(&entry.image) {
            continue;
        }
        let features = featurizer.features_with(&ctx, &entry.image)?;
        results.push(RankedResult {
            image: entry.image.clone(),
            score: model.score(&features)?,
        });
    }
    results.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.image.cmp(&b.image))
    });
    results.truncate(top_n);
    Ok(RankedList {
        query: query.clone(),
        mode: featurizer.mode(),
        results,
    })
}

/// Scores the query's candidates under `mode` and returns the top `top_n`,
/// sorted by (score desc, image asc).
pub fn rank(
    query: &ImageSig,
    index: &CandidateIndex,
    pinjoins: &PinJoinSet,
    model: &RankModel,
    mode: Mode,
    top_n: usize,
) -> Result<RankedList> {
    if top_n == 0 {
        return Err(Error::InvalidConfig("top_n must be at least 1".into()));
    }
    let featurizer = Featurizer::new(pinjoins, mode);
    model.check_schema(featurizer.schema())?;
    rank_prepared(query, index, pinjoins, &featurizer, model, top_n)
}

/// Ranks every query in the index. Per-query failures go to the skip
/// report instead of aborting the batch; both lists come back in query
/// order regardless of worker scheduling.
pub fn rank_all(
    index: &CandidateIndex,
    pinjoins: &PinJoinSet,
    model: &RankModel,
    mode: Mode,
    top_n: usize,
) -> Result<RankAllOutcome> {
    if top_n == 0 {
        return Err(Error::InvalidConfig("top_n must be at least 1".into()));
    }
    let featurizer = Featurizer::new(pinjoins, mode);
    model.check_schema(featurizer.schema())?;

    let queries: Vec<&ImageSig> = index.entries.keys().collect();
    let ranked: Vec<(usize, Result<RankedList>)> = queries
        .par_iter()
        .enumerate()
        .map(|(i, query)| {
            (
                i,
                rank_prepared(query, index, pinjoins, &featurizer, model, top_n),
            )
        })
        .collect();

    let ordered: BTreeMap<usize, Result<RankedList>> = ranked.into_iter().collect();
    let mut lists = Vec::new();
    let mut skipped = Vec::new();
    for (i, result) in ordered {
        match result {
            Ok(list) => lists.push(list),
            Err(e) => skipped.push((queries[i].clone(), e.to_string())),
        }
    }
    Ok(RankAllOutcome { lists, skipped })
}

/// Writes a header line followed by one RankedList per line.
pub fn write_recommendations(
    outcome: &RankAllOutcome,
    mode: Mode,
    top_n: usize,
    path: &Path,
) -> Result<()> {
    let mut writer = JsonlWriter::create(path)?;
    writer.write(&RecommendationsHeader {
        mode,
        top_n,
        queries: outcome.lists.len(),
        skipped: outcome.skipped.len(),
    })?;
    for list in &outcome.lists {
        writer.write(list)?;
    }
    writer.finish()
}
