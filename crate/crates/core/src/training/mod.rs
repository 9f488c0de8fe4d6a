//! Training-data mining from engagement logs.
//!
//! Click-through rates are normalized by (position, device) priors using a
//! clicks-over-expected-clicks model; per query, the best and worst engaged
//! candidates form a relative ranking triplet, and the worst candidate is
//! additionally paired against a random corpus image.

mod ranksvm;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ranksvm::{
    pairwise_accuracy, train, train_full_batch, FeatureSource, Hyperparams, RankModel, ScalerEntry,
};

use crate::corpus::{ImageSig, PinJoinSet};
use crate::jsonl;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    Web,
    Mobile,
    Tablet,
}

/// One impression of `candidate` in the result list for `query`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementEvent {
    pub query: ImageSig,
    pub candidate: ImageSig,
    /// 1-based display position.
    pub position: u32,
    pub device: Device,
    pub clicked: bool,
    pub timestamp: i64,
}

/// Position/device-debiased engagement scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CoecTable {
    /// Empirical click-through rate per (position, device) slot.
    pub prior_ctr: BTreeMap<(u32, Device), f64>,
    /// clicks / expected clicks per (query, candidate); only pairs with at
    /// least `min_impressions` impressions and positive expected clicks.
    pub scores: BTreeMap<(ImageSig, ImageSig), f64>,
    pub min_impressions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripletKind {
    Engaged,
    RandomNegative,
}

/// Relative ranking statement: `positive` should outrank `negative` for
/// `query`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub query: ImageSig,
    pub positive: ImageSig,
    pub negative: ImageSig,
    pub kind: TripletKind,
}

#[derive(Default, Clone)]
struct SlotAgg {
    impressions: u64,
    clicks: u64,
}

#[derive(Default, Clone)]
struct PairAgg {
    impressions: u64,
    clicks: u64,
    /// Impressions per slot, kept as integers so expected clicks can be
    /// computed in deterministic key order after all merging.
    slots: BTreeMap<(u32, Device), u64>,
}

#[derive(Default)]
struct LogAgg {
    slots: BTreeMap<(u32, Device), SlotAgg>,
    pairs: BTreeMap<(ImageSig, ImageSig), PairAgg>,
}

impl LogAgg {
    fn absorb(&mut self, event: &EngagementEvent) {
        let slot_key = (event.position, event.device);
        let slot = self.slots.entry(slot_key).or_default();
        slot.impressions += 1;
        let pair = self
            .pairs
            .entry((event.query.clone(), event.candidate.clone()))
            .or_default();
        pair.impressions += 1;
        *pair.slots.entry(slot_key).or_insert(0) += 1;
        if event.clicked {
            slot.clicks += 1;
            pair.clicks += 1;
        }
    }

    fn merge(mut self, other: LogAgg) -> LogAgg {
        for (key, slot) in other.slots {
            let entry = self.slots.entry(key).or_default();
            entry.impressions += slot.impressions;
            entry.clicks += slot.clicks;
        }
        for (key, pair) in other.pairs {
            let entry = self.pairs.entry(key).or_default();
            entry.impressions += pair.impressions;
            entry.clicks += pair.clicks;
            for (slot, count) in pair.slots {
                *entry.slots.entry(slot).or_insert(0) += count;
            }
        }
        self
    }
}

/// Computes clicks-over-expected-clicks scores from a raw impression log.
///
/// Aggregation is integer-only and merged associatively, so the result is
/// identical for any sharding of the log. Events with `query == candidate`
/// are ignored.
pub fn compute_coec(log: &[EngagementEvent], min_impressions: u64) -> CoecTable {
    let agg = log
        .par_chunks(16_384)
        .fold(LogAgg::default, |mut acc, chunk| {
            for event in chunk.iter().filter(|e| e.query != e.candidate) {
                acc.absorb(event);
            }
            acc
        })
        .reduce(LogAgg::default, LogAgg::merge);

    let prior_ctr: BTreeMap<(u32, Device), f64> = agg
        .slots
        .iter()
        .map(|(&key, slot)| (key, slot.clicks as f64 / slot.impressions as f64))
        .collect();

    let mut scores = BTreeMap::new();
    for (pair_key, pair) in agg.pairs {
        if pair.impressions < min_impressions {
            continue;
        }
        let expected_clicks: f64 = pair
            .slots
            .iter()
            .map(|(slot, &count)| count as f64 * prior_ctr[slot])
            .sum();
        if expected_clicks > 0.0 {
            scores.insert(pair_key, pair.clicks as f64 / expected_clicks);
        }
    }

    CoecTable {
        prior_ctr,
        scores,
        min_impressions,
    }
}

/// Mines ranking triplets from a COEC table.
///
/// Per query: the best and worst scored candidates form an engaged triplet
/// (strict score inequality required, ties broken toward the smaller
/// ImageSig), and the worst candidate is paired against one random image
/// drawn outside the query's scored set.
pub fn mine_triplets(coec: &CoecTable, pinjoins: &PinJoinSet, seed: u64) -> Vec<Triplet> {
    let universe: Vec<&ImageSig> = pinjoins.images().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::new();

    let mut by_query: BTreeMap<&ImageSig, Vec<(&ImageSig, f64)>> = BTreeMap::new();
    for ((query, candidate), &score) in &coec.scores {
        by_query.entry(query).or_default().push((candidate, score));
    }

    for (query, scored) in by_query {
        // candidates arrive in ascending sig order, so keeping only strict
        // improvements picks the smallest sig among tied scores
        let mut best = scored[0];
        let mut worst = scored[0];
        for &(candidate, score) in &scored[1..] {
            if score > best.1 {
                best = (candidate, score);
            }
            if score < worst.1 {
                worst = (candidate, score);
            }
        }
        if best.1 > worst.1 {
            triplets.push(Triplet {
                query: query.clone(),
                positive: best.0.clone(),
                negative: worst.0.clone(),
                kind: TripletKind::Engaged,
            });
        }

        let excluded: BTreeSet<&ImageSig> = scored
            .iter()
            .map(|&(c, _)| c)
            .chain(std::iter::once(query))
            .collect();
        if let Some(random) = draw_excluded(&universe, &excluded, &mut rng) {
            triplets.push(Triplet {
                query: query.clone(),
                positive: worst.0.clone(),
                negative: random.clone(),
                kind: TripletKind::RandomNegative,
            });
        }
    }
    triplets
}

/// Uniform draw from `universe` minus `excluded`; None when nothing is
/// drawable. Bounded rejection sampling followed by a cyclic scan keeps the
/// draw deterministic and terminating.
fn draw_excluded<'a>(
    universe: &[&'a ImageSig],
    excluded: &BTreeSet<&ImageSig>,
    rng: &mut ChaCha8Rng,
) -> Option<&'a ImageSig> {
    if universe.len() <= excluded.iter().filter(|e| universe.binary_search(e).is_ok()).count() {
        return None;
    }
    let mut idx = 0;
    for _ in 0..32 {
        idx = rng.gen_range(0..universe.len());
        if !excluded.contains(universe[idx]) {
            return Some(universe[idx]);
        }
    }
    for offset in 1..=universe.len() {
        let probe = (idx + offset) % universe.len();
        if !excluded.contains(universe[probe]) {
            return Some(universe[probe]);
        }
    }
    None
}

/// Splits triplets into (train, holdout) by query, so no query's triplets
/// leak across the boundary. `holdout_frac` of the distinct queries go to
/// the holdout side; selection is a seeded shuffle.
pub fn split_by_query(
    triplets: &[Triplet],
    holdout_frac: f64,
    seed: u64,
) -> (Vec<Triplet>, Vec<Triplet>) {
    use rand::seq::SliceRandom;

    let mut queries: Vec<&ImageSig> = triplets
        .iter()
        .map(|t| &t.query)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_holdout = (queries.len() as f64 * holdout_frac).round() as usize;
    queries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let holdout_queries: BTreeSet<&ImageSig> = queries.into_iter().take(n_holdout).collect();

    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for t in triplets {
        if holdout_queries.contains(&t.query) {
            holdout.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    (train, holdout)
}

pub fn read_events(path: &Path) -> Result<Vec<EngagementEvent>> {
    jsonl::read_all(path)
}

pub fn write_events(path: &Path, events: &[EngagementEvent]) -> Result<()> {
    jsonl::write_all(path, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PinJoin;

    fn sig(name: &str) -> ImageSig {
        ImageSig::new(name)
    }

    fn event(query: &str, candidate: &str, position: u32, device: Device, clicked: bool) -> EngagementEvent {
        EngagementEvent {
            query: sig(query),
            candidate: sig(candidate),
            position,
            device,
            clicked,
            timestamp: 0,
        }
    }

    fn impressions(
        query: &str,
        candidate: &str,
        position: u32,
        device: Device,
        total: usize,
        clicks: usize,
    ) -> Vec<EngagementEvent> {
        (0..total)
            .map(|i| event(query, candidate, position, device, i < clicks))
            .collect()
    }

    fn plain_joins(names: &[&str]) -> PinJoinSet {
        PinJoinSet::from_joins(
            names.iter().map(|n| PinJoin {
                image: sig(n),
                pins: vec![format!("{n}-pin")],
                annotations: BTreeMap::new(),
                popularity: 1,
                binary_code: None,
                sparse_vec: BTreeMap::new(),
                topic_vec: Vec::new(),
                category_vec: BTreeMap::new(),
                crop_binary_code: None,
                crop_sparse_vec: BTreeMap::new(),
                detections: Vec::new(),
                quality: 1.0,
            }),
            8,
            2,
        )
    }

    #[test]
    fn coec_hand_example() {
        // slot (1, web) prior 0.1 from background traffic; the probed pair
        // has 10 impressions there with 2 clicks
        let mut log = impressions("bgq", "bgc", 1, Device::Web, 90, 8);
        log.extend(impressions("q", "d", 1, Device::Web, 10, 2));
        let table = compute_coec(&log, 10);

        let prior = table.prior_ctr[&(1, Device::Web)];
        assert!((prior - 0.1).abs() < 1e-12);
        // EC = 10 * 0.1 = 1.0, COEC = 2 / 1.0
        let score = table.scores[&(sig("q"), sig("d"))];
        assert!((score - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_pairs_get_identical_coec() {
        let mut log = Vec::new();
        for candidate in ["d1", "d2", "d3"] {
            log.extend(impressions("q", candidate, 2, Device::Mobile, 20, 5));
        }
        let table = compute_coec(&log, 10);
        let scores: Vec<f64> = ["d1", "d2", "d3"]
            .iter()
            .map(|c| table.scores[&(sig("q"), sig(c))])
            .collect();
        assert_eq!(scores[0], scores[1]);
        assert_eq!(scores[1], scores[2]);
    }

    #[test]
    fn pairs_below_min_impressions_are_excluded() {
        let mut log = impressions("q", "common", 1, Device::Web, 10, 1);
        log.extend(impressions("q", "rare", 1, Device::Web, 3, 3));
        let table = compute_coec(&log, 5);
        assert!(table.scores.contains_key(&(sig("q"), sig("common"))));
        assert!(!table.scores.contains_key(&(sig("q"), sig("rare"))));
    }

    #[test]
    fn coec_is_invariant_under_log_duplication() {
        let mut log = impressions("q", "d1", 1, Device::Web, 12, 4);
        log.extend(impressions("q", "d2", 2, Device::Web, 15, 3));
        log.extend(impressions("q", "d2", 1, Device::Tablet, 11, 2));

        let base = compute_coec(&log, 10);
        // power-of-two duplication scales every count exactly
        let doubled_log: Vec<_> = log.iter().chain(log.iter()).cloned().collect();
        let doubled = compute_coec(&doubled_log, 10);
        assert_eq!(base.prior_ctr, doubled.prior_ctr);
        assert_eq!(base.scores, doubled.scores);

        let tripled_log: Vec<_> = std::iter::repeat_with(|| log.clone())
            .take(3)
            .flatten()
            .collect();
        let tripled = compute_coec(&tripled_log, 10);
        for (key, score) in &base.scores {
            assert!((score - tripled.scores[key]).abs() < 1e-12);
        }
    }

    #[test]
    fn coec_debiases_position_skew() {
        // two candidates with identical true propensity shown at skewed
        // positions: d1 mostly at position 1, d2 mostly at position 3.
        // position priors 0.2 / 0.05 come from the click counts themselves.
        let mut log = Vec::new();
        log.extend(impressions("q", "d1", 1, Device::Web, 800, 160));
        log.extend(impressions("q", "d1", 3, Device::Web, 200, 10));
        log.extend(impressions("q", "d2", 1, Device::Web, 200, 40));
        log.extend(impressions("q", "d2", 3, Device::Web, 800, 40));
        let table = compute_coec(&log, 10);

        let c1 = table.scores[&(sig("q"), sig("d1"))];
        let c2 = table.scores[&(sig("q"), sig("d2"))];
        assert!((c1 / c2 - 1.0).abs() < 1e-9, "ratio {}", c1 / c2);

        // raw CTR tells the opposite story
        let raw1 = 170.0 / 1000.0;
        let raw2 = 80.0 / 1000.0;
        assert!(raw1 / raw2 > 2.0);
    }

    #[test]
    fn mining_hand_example() {
        let mut log = Vec::new();
        log.extend(impressions("q", "d1", 1, Device::Web, 100, 5));
        log.extend(impressions("q", "d2", 1, Device::Web, 100, 10));
        log.extend(impressions("q", "d3", 1, Device::Web, 100, 20));
        let table = compute_coec(&log, 10);
        assert!(table.scores[&(sig("q"), sig("d3"))] > table.scores[&(sig("q"), sig("d1"))]);

        let pinjoins = plain_joins(&["q", "d1", "d2", "d3", "x1", "x2"]);
        let triplets = mine_triplets(&table, &pinjoins, 7);
        assert_eq!(triplets.len(), 2);

        let engaged = &triplets[0];
        assert_eq!(engaged.kind, TripletKind::Engaged);
        assert_eq!(engaged.positive, sig("d3"));
        assert_eq!(engaged.negative, sig("d1"));

        let random = &triplets[1];
        assert_eq!(random.kind, TripletKind::RandomNegative);
        assert_eq!(random.positive, sig("d1"));
        assert!(["x1", "x2"].contains(&random.negative.as_str()));
    }

    #[test]
    fn single_candidate_yields_only_random_negative() {
        let log = impressions("q", "d1", 1, Device::Web, 50, 10);
        let table = compute_coec(&log, 10);
        let pinjoins = plain_joins(&["q", "d1", "x1"]);
        let triplets = mine_triplets(&table, &pinjoins, 3);
        assert_eq!(triplets.len(), 1);
        assert_eq!(triplets[0].kind, TripletKind::RandomNegative);
        assert_eq!(triplets[0].negative, sig("x1"));
    }

    #[test]
    fn tied_scores_yield_no_engaged_triplet() {
        let mut log = impressions("q", "d1", 1, Device::Web, 50, 10);
        log.extend(impressions("q", "d2", 1, Device::Web, 50, 10));
        let table = compute_coec(&log, 10);
        let pinjoins = plain_joins(&["q", "d1", "d2", "x1"]);
        let triplets = mine_triplets(&table, &pinjoins, 3);
        assert_eq!(triplets.len(), 1);
        assert_eq!(triplets[0].kind, TripletKind::RandomNegative);
    }

    #[test]
    fn random_negative_skipped_when_corpus_is_exhausted() {
        let log = impressions("q", "d1", 1, Device::Web, 50, 10);
        let table = compute_coec(&log, 10);
        let pinjoins = plain_joins(&["q", "d1"]);
        assert!(mine_triplets(&table, &pinjoins, 3).is_empty());
    }

    #[test]
    fn mining_is_deterministic_per_seed() {
        let mut log = Vec::new();
        for (i, q) in ["q1", "q2", "q3"].iter().enumerate() {
            log.extend(impressions(q, "d1", 1, Device::Web, 40, 4 + i));
            log.extend(impressions(q, "d2", 1, Device::Web, 40, 8));
        }
        let table = compute_coec(&log, 10);
        let names: Vec<String> = (0..30).map(|i| format!("x{i:02}")).collect();
        let mut all: Vec<&str> = vec!["q1", "q2", "q3", "d1", "d2"];
        all.extend(names.iter().map(String::as_str));
        let pinjoins = plain_joins(&all);

        let a = mine_triplets(&table, &pinjoins, 42);
        let b = mine_triplets(&table, &pinjoins, 42);
        assert_eq!(a, b);
        let c = mine_triplets(&table, &pinjoins, 43);
        assert_eq!(a.len(), c.len());
    }

    #[test]
    fn events_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let events = vec![
            event("q", "d1", 1, Device::Web, true),
            event("q", "d2", 2, Device::Tablet, false),
        ];
        write_events(&path, &events).unwrap();
        assert_eq!(read_events(&path).unwrap(), events);
    }

    #[test]
    fn query_split_keeps_queries_on_one_side() {
        let triplets: Vec<Triplet> = (0..40)
            .flat_map(|i| {
                let q = format!("q{i:02}");
                [
                    Triplet {
                        query: sig(&q),
                        positive: sig("a"),
                        negative: sig("b"),
                        kind: TripletKind::Engaged,
                    },
                    Triplet {
                        query: sig(&q),
                        positive: sig("b"),
                        negative: sig("c"),
                        kind: TripletKind::RandomNegative,
                    },
                ]
            })
            .collect();
        let (train_set, holdout) = split_by_query(&triplets, 0.25, 9);
        assert_eq!(train_set.len() + holdout.len(), triplets.len());
        assert_eq!(holdout.len(), 20);

        let train_queries: BTreeSet<&ImageSig> = train_set.iter().map(|t| &t.query).collect();
        let holdout_queries: BTreeSet<&ImageSig> = holdout.iter().map(|t| &t.query).collect();
        assert!(train_queries.is_disjoint(&holdout_queries));

        let again = split_by_query(&triplets, 0.25, 9);
        assert_eq!(again.0, train_set);
        let different = split_by_query(&triplets, 0.25, 10);
        assert!(different.0 != train_set || different.1 != holdout);
    }
}
