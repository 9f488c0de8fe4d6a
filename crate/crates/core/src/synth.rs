//! Seeded synthetic corpora with known latent structure.
//!
//! Images belong to latent topics, and within each topic to a subcluster.
//! Embeddings are drawn from per-subcluster templates with per-image
//! noise, while annotations, topic vectors, and categories only reflect
//! the topic. Subcluster membership is therefore visible to the embedding
//! similarities and invisible to every non-visual feature, which is what
//! lets embedding-aware rankers measurably beat annotation-only ones.
//! Boards draw mostly from one topic, which gives the co-occurrence index
//! real signal. Engagement logs follow the examination hypothesis: click
//! probability is position bias times a sigmoid of a hidden relevance
//! score, so position debiasing and ranking quality are both verifiable
//! against ground truth.
//!
//! Generation is single-threaded on one seeded stream; identical configs
//! give byte-identical artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BinaryCode;
use crate::candgen::CandidateIndex;
use crate::corpus::{BoardJoin, Corpus, Detection, ImageEmbedding, ImageSig, Pin, PinJoinSet};
use crate::features::{
    query_dominance, sparsify, FeatureSchema, Featurizer, Mode, DEFAULT_SPARSE_K, GATE_BOOST,
};
use crate::training::{Device, EngagementEvent};
use crate::{Error, Result};

/// Dense dimensionality the sparse vectors are drawn from before top-k
/// truncation. Large enough that cross-topic overlap is small.
const DENSE_DIM: usize = 256;

/// Base timestamp for generated events; only relative order matters.
const EPOCH: i64 = 1_600_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_topics: usize,
    /// Embedding subclusters per topic; annotations cannot see these.
    pub sub_topics: usize,
    pub n_images: usize,
    pub n_boards: usize,
    /// Inclusive (min, max) board size in pins.
    pub pins_per_board: (usize, usize),
    pub seed: u64,
    /// Per-position prior click rates, strictly decreasing.
    pub position_bias: Vec<f64>,
    /// Hidden weight vector over the widest feature schema; drives click
    /// probability and is persisted as ground truth.
    pub relevance_model: Vec<f64>,
    /// Probability a click label is flipped, in [0, 0.5).
    pub noise: f64,
    pub n_bits: usize,
    pub topic_dim: usize,
    /// Probability a board member is drawn from the whole corpus instead
    /// of the board's topic.
    pub off_topic_prob: f64,
    /// Per-bit flip probability away from the topic template code.
    pub bit_flip_prob: f64,
    /// Fraction of images that receive a dominant detection box.
    pub dominant_frac: f64,
    pub sessions_per_query: usize,
    /// Each session's result slate is drawn from this many top candidates,
    /// concentrating impressions so per-pair counts are estimable.
    pub slate_pool: usize,
    /// Emit object-crop embeddings alongside whole-image ones.
    pub crops: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_topics: 8,
            sub_topics: 4,
            n_images: 600,
            n_boards: 300,
            pins_per_board: (8, 20),
            seed: 0,
            position_bias: vec![0.30, 0.20, 0.12, 0.08, 0.05],
            relevance_model: default_relevance_model(),
            noise: 0.02,
            n_bits: 128,
            topic_dim: 16,
            off_topic_prob: 0.10,
            bit_flip_prob: 0.12,
            dominant_frac: 0.30,
            sessions_per_query: 240,
            slate_pool: 10,
            crops: true,
        }
    }
}

/// Hidden weights over the visual_cross schema. Visual similarities carry
/// most of the within-query signal (subcluster structure makes them vary
/// where annotations do not), cross terms give even-numbered categories a
/// heavier code weight so category-conditioned models have something real
/// to recover, and the always-one query indicator acts as a negative
/// intercept that keeps click probabilities in the responsive region of
/// the sigmoid.
pub fn default_relevance_model() -> Vec<f64> {
    let schema = FeatureSchema::for_mode(Mode::VisualCross);
    schema
        .names
        .iter()
        .map(|name| match name.as_str() {
            "annotation_sim" => 0.3,
            "topic_sim" => 0.3,
            "category_sim" => 0.05,
            "cand_quality" => 1.0,
            "cand_popularity" => 0.1,
            "fc6_sim" => 0.6,
            "fc8_sim" => 1.2,
            "query_has_visual" => -2.4,
            "cand_has_visual" => 0.0,
            other => {
                let cat: u8 = other
                    .strip_prefix("cross_cat_")
                    .and_then(|c| c.parse().ok())
                    .expect("schema only adds cross features beyond the base names");
                // two categories invert the code signal while the rest
                // amplify it, so one shared code weight always misranks
                // the inverted minority
                if cat < 2 {
                    -2.6
                } else {
                    1.0
                }
            }
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.n_topics == 0 || self.sub_topics == 0 || self.n_images == 0 || self.n_boards == 0 {
            return bad("n_topics, sub_topics, n_images, n_boards must be positive");
        }
        if self.pins_per_board.0 == 0 || self.pins_per_board.0 > self.pins_per_board.1 {
            return bad("pins_per_board must be a non-empty ascending range");
        }
        if self.position_bias.is_empty()
            || self.position_bias.iter().any(|b| !(*b > 0.0 && *b <= 1.0))
            || self.position_bias.windows(2).any(|w| w[1] >= w[0])
        {
            return bad("position_bias must be strictly decreasing values in (0, 1]");
        }
        let n_features = FeatureSchema::for_mode(Mode::VisualCross).n_features();
        if self.relevance_model.len() != n_features
            || self.relevance_model.iter().any(|w| !w.is_finite())
        {
            return bad("relevance_model must supply one finite weight per feature");
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad("noise must be in [0, 0.5)");
        }
        if self.n_bits < 8 || self.n_bits % 4 != 0 {
            return bad("n_bits must be at least 8 and a multiple of 4");
        }
        if self.topic_dim == 0 {
            return bad("topic_dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.off_topic_prob)
            || !(0.0..=1.0).contains(&self.dominant_frac)
            || !(0.0..=0.5).contains(&self.bit_flip_prob)
        {
            return bad("probabilities must lie in their unit ranges");
        }
        if self.slate_pool == 0 {
            return bad("slate_pool must be positive");
        }
        Ok(())
    }
}

/// Hidden relevance for one index pair, persisted for oracle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub query: ImageSig,
    pub candidate: ImageSig,
    pub relevance: f64,
}

fn image_sig(i: usize) -> ImageSig {
    ImageSig::new(format!("img{i:05}"))
}

fn topic_of(i: usize, config: &SynthConfig) -> usize {
    i % config.n_topics
}

fn sub_of(i: usize, config: &SynthConfig) -> usize {
    (i / config.n_topics) % config.sub_topics
}

/// Templates indexed `[topic][subcluster]`. Subclusters of one topic share
/// the lower half of the code bits and half of the dense mass, so
/// same-subcluster pairs are closest, same-topic pairs are intermediate,
/// and cross-topic pairs are near chance.
struct TopicTemplates {
    codes: Vec<Vec<BinaryCode>>,
    dense: Vec<Vec<Vec<f64>>>,
}

fn draw_templates(config: &SynthConfig, rng: &mut ChaCha8Rng) -> TopicTemplates {
    let mut codes = Vec::with_capacity(config.n_topics);
    let mut dense = Vec::with_capacity(config.n_topics);
    for _ in 0..config.n_topics {
        let base_code = BinaryCode::from_bits((0..config.n_bits).map(|_| rng.gen::<bool>()));
        let base_dense: Vec<f64> = (0..DENSE_DIM).map(|_| rng.gen::<f64>()).collect();
        let mut topic_codes = Vec::with_capacity(config.sub_topics);
        let mut topic_dense = Vec::with_capacity(config.sub_topics);
        for _ in 0..config.sub_topics {
            let mut code = base_code.clone();
            for i in config.n_bits / 2..config.n_bits {
                code.set(i, rng.gen::<bool>());
            }
            topic_codes.push(code);
            topic_dense.push(
                base_dense
                    .iter()
                    .map(|b| 0.5 * b + 0.5 * rng.gen::<f64>())
                    .collect(),
            );
        }
        codes.push(topic_codes);
        dense.push(topic_dense);
    }
    TopicTemplates { codes, dense }
}

fn noisy_code(template: &BinaryCode, flip_prob: f64, rng: &mut ChaCha8Rng) -> BinaryCode {
    let mut code = template.clone();
    for i in 0..code.len() {
        if rng.gen_bool(flip_prob) {
            code.flip(i);
        }
    }
    code
}

fn noisy_sparse(template: &[f64], template_weight: f64, rng: &mut ChaCha8Rng) -> BTreeMap<u32, f64> {
    let dense: Vec<f64> = template
        .iter()
        .map(|t| t * template_weight + rng.gen::<f64>() * (1.0 - template_weight))
        .collect();
    sparsify(&dense, DEFAULT_SPARSE_K)
}

fn draw_detections(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let small_box = |conf_max: f64, rng: &mut ChaCha8Rng| {
        let w = rng.gen_range(0.05..0.20);
        let h = rng.gen_range(0.05..0.20);
        Detection {
            x: rng.gen_range(0.0..1.0 - w),
            y: rng.gen_range(0.0..1.0 - h),
            w,
            h,
            label: "minor".into(),
            confidence: rng.gen_range(0.05..conf_max),
        }
    };

    let roll = rng.gen::<f64>();
    if roll < config.dominant_frac {
        // one large confident box plus clutter the NMS stage must handle;
        // clutter confidence stays below the main box so it never wins
        let w = rng.gen_range(0.55..0.85);
        let h = rng.gen_range(0.55..0.85);
        let mut boxes = vec![Detection {
            x: rng.gen_range(0.0..1.0 - w),
            y: rng.gen_range(0.0..1.0 - h),
            w,
            h,
            label: "object".into(),
            confidence: rng.gen_range(0.60..0.99),
        }];
        for _ in 0..rng.gen_range(0..=2usize) {
            boxes.push(small_box(0.50, rng));
        }
        boxes
    } else if roll < config.dominant_frac + (1.0 - config.dominant_frac) * 0.5 {
        // minor boxes only: area under 4% and confidence under 0.5, so the
        // largest survivor is never dominant
        (0..rng.gen_range(1..=3usize))
            .map(|_| small_box(0.50, rng))
            .collect()
    } else {
        Vec::new()
    }
}

/// Generates a full corpus: boards, pins, embeddings, optional crops and
/// detections. Images cycle through topics; board members are drawn from
/// the board's topic except for `off_topic_prob` strays.
pub fn generate_corpus(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let templates = draw_templates(config, &mut rng);

    let mut embeddings = BTreeMap::new();
    let mut crops = BTreeMap::new();
    let mut detections = BTreeMap::new();
    let mut image_tokens: Vec<Vec<String>> = Vec::with_capacity(config.n_images);
    for i in 0..config.n_images {
        let t = topic_of(i, config);
        let s = sub_of(i, config);
        let sig = image_sig(i);

        let mut topic_vec = vec![0.0; config.topic_dim];
        topic_vec[t % config.topic_dim] = 1.0;
        for v in topic_vec.iter_mut() {
            *v += rng.gen_range(-0.25..0.25);
        }

        // odd subclusters skew low-quality: visual similarity and quality
        // then disagree for queries living there, so rankers must trade
        // the two off instead of riding one aligned signal
        let quality_floor = if s % 2 == 1 { 0.45 } else { 0.85 };
        embeddings.insert(
            sig.clone(),
            ImageEmbedding {
                binary_code: noisy_code(&templates.codes[t][s], config.bit_flip_prob, &mut rng),
                sparse_vec: noisy_sparse(&templates.dense[t][s], 0.7, &mut rng),
                topic_vec,
                category_vec: BTreeMap::from([((t % 32) as u8, 1.0)]),
                quality: rng.gen_range(quality_floor..quality_floor + 0.15),
            },
        );
        if config.crops {
            // crops hug the template: an object crop discards background
            crops.insert(
                sig.clone(),
                ImageEmbedding {
                    binary_code: noisy_code(
                        &templates.codes[t][s],
                        config.bit_flip_prob / 2.0,
                        &mut rng,
                    ),
                    sparse_vec: noisy_sparse(&templates.dense[t][s], 0.85, &mut rng),
                    topic_vec: Vec::new(),
                    category_vec: BTreeMap::new(),
                    quality: 1.0,
                },
            );
        }
        let boxes = draw_detections(config, &mut rng);
        if !boxes.is_empty() {
            detections.insert(sig, boxes);
        }

        image_tokens.push(vec![
            format!("topic{t}"),
            format!("attr{t}x{}", rng.gen_range(0..12)),
            format!("attr{t}x{}", rng.gen_range(0..12)),
        ]);
    }

    let per_topic: Vec<Vec<usize>> = (0..config.n_topics)
        .map(|t| (0..config.n_images).filter(|i| topic_of(*i, config) == t).collect())
        .collect();

    let mut pins = BTreeMap::new();
    let mut boards = BTreeMap::new();
    for b in 0..config.n_boards {
        let t = b % config.n_topics;
        let size = rng.gen_range(config.pins_per_board.0..=config.pins_per_board.1);
        let mut members = std::collections::BTreeSet::new();
        for _ in 0..size * 20 + 20 {
            if members.len() == size {
                break;
            }
            let idx = if rng.gen_bool(config.off_topic_prob) {
                rng.gen_range(0..config.n_images)
            } else {
                per_topic[t][rng.gen_range(0..per_topic[t].len())]
            };
            members.insert(idx);
        }

        let board_id = format!("board{b:04}");
        let mut member_pins = Vec::with_capacity(members.len());
        for (k, idx) in members.iter().enumerate() {
            let pin_id = format!("pin{b:04}x{k:03}");
            member_pins.push(pin_id.clone());
            pins.insert(
                pin_id.clone(),
                Pin {
                    pin_id,
                    image: image_sig(*idx),
                    board_id: board_id.clone(),
                    description_tokens: image_tokens[*idx].clone(),
                    created_at: EPOCH + (b * 1000 + k) as i64,
                },
            );
        }
        boards.insert(
            board_id.clone(),
            BoardJoin {
                board_id,
                title_tokens: vec![format!("topic{t}"), format!("style{}", b % 7)],
                pins: member_pins,
                category_id: Some((t % 32) as u8),
            },
        );
    }

    Ok(Corpus {
        pins,
        boards,
        embeddings,
        crops,
        detections,
        n_bits: config.n_bits,
        topic_dim: config.topic_dim,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden relevance for every (query, candidate) pair in the index: the
/// relevance model dotted with the widest feature vector. For
/// dominant-object queries the two visual similarities count with a
/// boosted slope, applied to the similarities centered on their population
/// means. Centering changes per-query score levels, never within-query
/// orderings, so it gives gating real signal to recover without pushing
/// dominant queries' click probabilities into sigmoid saturation.
fn truth_relevances(
    pinjoins: &PinJoinSet,
    index: &CandidateIndex,
    config: &SynthConfig,
) -> Result<BTreeMap<(ImageSig, ImageSig), f64>> {
    let featurizer = Featurizer::new(pinjoins, Mode::VisualCross);
    let schema = featurizer.schema();
    let fc6 = schema.names.iter().position(|n| n == "fc6_sim").unwrap();
    let fc8 = schema.names.iter().position(|n| n == "fc8_sim").unwrap();

    let mut rows = Vec::new();
    let mut sums = (0.0, 0.0);
    for (query, entries) in &index.entries {
        let Some(join) = pinjoins.get(query) else {
            continue;
        };
        let dominant = query_dominance(join);
        let ctx = featurizer.query_context(query)?;
        for entry in entries {
            if !pinjoins.contains(&entry.image) {
                continue;
            }
            let phi = featurizer.features_with(&ctx, &entry.image)?;
            sums.0 += phi.values[fc6];
            sums.1 += phi.values[fc8];
            rows.push((query.clone(), entry.image.clone(), dominant, phi));
        }
    }
    let n = rows.len().max(1) as f64;
    let centers = (sums.0 / n, sums.1 / n);

    let mut relevances = BTreeMap::new();
    for (query, candidate, dominant, phi) in rows {
        let mut relevance: f64 = config
            .relevance_model
            .iter()
            .zip(&phi.values)
            .map(|(w, v)| w * v)
            .sum();
        if dominant {
            relevance += (GATE_BOOST - 1.0)
                * (config.relevance_model[fc6] * (phi.values[fc6] - centers.0)
                    + config.relevance_model[fc8] * (phi.values[fc8] - centers.1));
        }
        relevances.insert((query, candidate), relevance);
    }
    Ok(relevances)
}

/// Simulates sessions over the index: each session shows a slate drawn
/// from the query's top candidates, positions are examined with the
/// configured bias, and clicks fire with probability
/// bias[position] * sigmoid(relevance), optionally label-flipped. Returns
/// the event log plus the hidden relevance of every index pair.
pub fn generate_engagement(
    pinjoins: &PinJoinSet,
    index: &CandidateIndex,
    config: &SynthConfig,
) -> Result<(Vec<EngagementEvent>, Vec<GroundTruth>)> {
    config.validate()?;
    let relevances = truth_relevances(pinjoins, index, config)?;

    // separate stream from corpus generation so the two stages stay
    // independently reproducible
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let devices = [Device::Web, Device::Mobile, Device::Tablet];
    let mut events = Vec::new();
    let mut timestamp = EPOCH;
    for (query, entries) in &index.entries {
        let pool: Vec<&ImageSig> = entries
            .iter()
            .filter(|e| relevances.contains_key(&(query.clone(), e.image.clone())))
            .take(config.slate_pool)
            .map(|e| &e.image)
            .collect();
        if pool.is_empty() {
            continue;
        }
        let slate_len = config.position_bias.len().min(pool.len());
        let mut order: Vec<usize> = (0..pool.len()).collect();
        for s in 0..config.sessions_per_query {
            let device = devices[s % devices.len()];
            let (slate, _) = order.partial_shuffle(&mut rng, slate_len);
            for (pos0, cand_idx) in slate.iter().enumerate() {
                let candidate = pool[*cand_idx].clone();
                let relevance = relevances[&(query.clone(), candidate.clone())];
                let p = config.position_bias[pos0] * sigmoid(relevance);
                let mut clicked = rng.gen_bool(p);
                if config.noise > 0.0 && rng.gen_bool(config.noise) {
                    clicked = !clicked;
                }
                events.push(EngagementEvent {
                    query: query.clone(),
                    candidate,
                    position: (pos0 + 1) as u32,
                    device,
                    clicked,
                    timestamp,
                });
                timestamp += 1;
            }
        }
    }

    let ground_truth = relevances
        .into_iter()
        .map(|((query, candidate), relevance)| GroundTruth {
            query,
            candidate,
            relevance,
        })
        .collect();
    Ok((events, ground_truth))
}

pub fn write_ground_truth(path: &Path, truths: &[GroundTruth]) -> Result<()> {
    crate::jsonl::write_all(path, truths)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    crate::jsonl::read_all(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candgen::{generate_candidates, GenConfig};
    use crate::corpus::{build_pinjoins, write_dir};
    use crate::training::{compute_coec, mine_triplets};

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_topics: 8,
            n_images: 80,
            n_boards: 40,
            pins_per_board: (4, 8),
            seed: 7,
            n_bits: 64,
            topic_dim: 8,
            sessions_per_query: 12,
            slate_pool: 6,
            position_bias: vec![0.3, 0.2, 0.1],
            ..SynthConfig::default()
        }
    }

    fn pipeline(config: &SynthConfig) -> (PinJoinSet, CandidateIndex) {
        let corpus = generate_corpus(config).unwrap();
        let pinjoins = build_pinjoins(&corpus);
        let index = generate_candidates(&corpus.boards, &pinjoins, &GenConfig::default()).unwrap();
        (pinjoins, index)
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let config = small_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_dir(&generate_corpus(&config).unwrap(), dir_a.path()).unwrap();
        write_dir(&generate_corpus(&config).unwrap(), dir_b.path()).unwrap();
        for name in [
            "pins.jsonl",
            "boards.jsonl",
            "embeddings.jsonl",
            "crops.jsonl",
            "detections.jsonl",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }

        let (pinjoins, index) = pipeline(&config);
        let run_a = generate_engagement(&pinjoins, &index, &config).unwrap();
        let run_b = generate_engagement(&pinjoins, &index, &config).unwrap();
        assert_eq!(run_a.0, run_b.0);
        assert_eq!(run_a.1, run_b.1);
    }

    #[test]
    fn different_seeds_give_different_codes() {
        let a = generate_corpus(&small_config()).unwrap();
        let b = generate_corpus(&SynthConfig {
            seed: 8,
            ..small_config()
        })
        .unwrap();
        let sig = image_sig(0);
        assert_ne!(
            a.embeddings[&sig].binary_code.to_hex(),
            b.embeddings[&sig].binary_code.to_hex()
        );
    }

    #[test]
    fn code_similarity_orders_subcluster_topic_cross() {
        let config = SynthConfig {
            n_images: 120,
            n_bits: 256,
            ..small_config()
        };
        let corpus = generate_corpus(&config).unwrap();
        let images: Vec<(usize, &ImageEmbedding)> = (0..config.n_images)
            .map(|i| (i, &corpus.embeddings[&image_sig(i)]))
            .collect();

        let (mut same_sub, mut same_topic, mut cross) = ((0.0, 0u32), (0.0, 0u32), (0.0, 0u32));
        for (i, a) in &images {
            for (j, b) in &images {
                if j <= i {
                    continue;
                }
                let dist = a.binary_code.hamming_distance(&b.binary_code).unwrap();
                let sim = 1.0 - dist as f64 / config.n_bits as f64;
                if topic_of(*i, &config) != topic_of(*j, &config) {
                    cross = (cross.0 + sim, cross.1 + 1);
                } else if sub_of(*i, &config) == sub_of(*j, &config) {
                    same_sub = (same_sub.0 + sim, same_sub.1 + 1);
                } else {
                    same_topic = (same_topic.0 + sim, same_topic.1 + 1);
                }
            }
        }
        let sub_mean = same_sub.0 / same_sub.1 as f64;
        let topic_mean = same_topic.0 / same_topic.1 as f64;
        let cross_mean = cross.0 / cross.1 as f64;
        let within_mean =
            (same_sub.0 + same_topic.0) / (same_sub.1 + same_topic.1) as f64;
        assert!(
            sub_mean > topic_mean + 0.05 && topic_mean > cross_mean + 0.05,
            "sub {sub_mean:.3} topic {topic_mean:.3} cross {cross_mean:.3}"
        );
        assert!(
            within_mean > cross_mean + 0.1,
            "within {within_mean:.3} cross {cross_mean:.3}"
        );
    }

    #[test]
    fn single_pin_board_yields_no_candidates() {
        let config = SynthConfig {
            n_images: 5,
            n_boards: 1,
            pins_per_board: (1, 1),
            ..small_config()
        };
        let (pinjoins, index) = pipeline(&config);
        assert_eq!(pinjoins.len(), 1);
        for (_, entries) in &index.entries {
            assert!(entries.is_empty());
        }
    }

    #[test]
    fn zero_sessions_produce_empty_log_but_full_ground_truth() {
        let config = SynthConfig {
            sessions_per_query: 0,
            ..small_config()
        };
        let (pinjoins, index) = pipeline(&config);
        let (events, truth) = generate_engagement(&pinjoins, &index, &config).unwrap();
        assert!(events.is_empty());

        let pairs: std::collections::BTreeSet<(ImageSig, ImageSig)> = truth
            .iter()
            .map(|g| (g.query.clone(), g.candidate.clone()))
            .collect();
        for (query, entries) in &index.entries {
            for entry in entries {
                assert!(pairs.contains(&(query.clone(), entry.image.clone())));
            }
        }
    }

    #[test]
    fn doubling_position_bias_scales_clicks_but_not_coec() {
        // sampled check: twice the bias, about twice the clicks
        let base = SynthConfig {
            noise: 0.0,
            ..small_config()
        };
        let doubled = SynthConfig {
            position_bias: base.position_bias.iter().map(|b| b * 2.0).collect(),
            ..base.clone()
        };
        let (pinjoins, index) = pipeline(&base);
        let clicks = |config: &SynthConfig| -> f64 {
            let (events, _) = generate_engagement(&pinjoins, &index, config).unwrap();
            events.iter().filter(|e| e.clicked).count() as f64
        };
        let ratio = clicks(&doubled) / clicks(&base);
        assert!((1.8..2.2).contains(&ratio), "click ratio {ratio}");

        // exact check: doubling every pair's click count doubles priors and
        // expected clicks alike, so COEC and the mined triplets are
        // unchanged bit for bit
        let q = ImageSig::new("q");
        let mut log = Vec::new();
        let mut log2 = Vec::new();
        for (cand, clicks_at_1, clicks_at_2) in
            [("d1", 2u32, 1u32), ("d2", 4, 2), ("d3", 6, 5)]
        {
            for pos in [1u32, 2] {
                let clicked_n = if pos == 1 { clicks_at_1 } else { clicks_at_2 };
                for imp in 0..20u32 {
                    let template = EngagementEvent {
                        query: q.clone(),
                        candidate: ImageSig::new(cand),
                        position: pos,
                        device: Device::Web,
                        clicked: false,
                        timestamp: 0,
                    };
                    log.push(EngagementEvent {
                        clicked: imp < clicked_n,
                        ..template.clone()
                    });
                    log2.push(EngagementEvent {
                        clicked: imp < 2 * clicked_n,
                        ..template
                    });
                }
            }
        }
        let coec = compute_coec(&log, 10);
        let coec2 = compute_coec(&log2, 10);
        assert_eq!(coec.scores, coec2.scores);

        let mut joins = Vec::new();
        for name in ["q", "d1", "d2", "d3", "spare"] {
            joins.push(crate::corpus::PinJoin {
                image: ImageSig::new(name),
                pins: vec![format!("p_{name}")],
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
            });
        }
        let pinjoin_set = PinJoinSet::from_joins(joins, 8, 1);
        assert_eq!(
            mine_triplets(&coec, &pinjoin_set, 3),
            mine_triplets(&coec2, &pinjoin_set, 3)
        );
    }

    #[test]
    fn click_rates_follow_hidden_relevance() {
        let config = SynthConfig {
            noise: 0.0,
            sessions_per_query: 80,
            ..small_config()
        };
        let (pinjoins, index) = pipeline(&config);
        let (events, truth) = generate_engagement(&pinjoins, &index, &config).unwrap();
        let coec = compute_coec(&events, 10);
        let relevance: BTreeMap<(ImageSig, ImageSig), f64> = truth
            .into_iter()
            .map(|g| ((g.query, g.candidate), g.relevance))
            .collect();

        // pairs of same-query candidates with a wide relevance gap should
        // almost always have COEC in the matching order
        let (mut agree, mut total) = (0u32, 0u32);
        let scored: Vec<(&(ImageSig, ImageSig), &f64)> = coec.scores.iter().collect();
        for (i, (pair_a, coec_a)) in scored.iter().enumerate() {
            for (pair_b, coec_b) in scored.iter().skip(i + 1) {
                if pair_a.0 != pair_b.0 {
                    continue;
                }
                let gap = relevance[*pair_a] - relevance[*pair_b];
                if gap.abs() < 1.5 {
                    continue;
                }
                total += 1;
                if (gap > 0.0) == (coec_a > coec_b) {
                    agree += 1;
                }
            }
        }
        assert!(total > 50, "only {total} wide-gap pairs");
        let rate = agree as f64 / total as f64;
        assert!(rate > 0.8, "agreement {rate:.3} over {total} pairs");
    }

    #[test]
    fn dominant_fraction_is_respected_and_nms_is_exercised() {
        let config = SynthConfig {
            n_images: 200,
            ..small_config()
        };
        let corpus = generate_corpus(&config).unwrap();
        let pinjoins = build_pinjoins(&corpus);
        let dominant = pinjoins.iter().filter(|j| query_dominance(j)).count();
        let frac = dominant as f64 / pinjoins.len() as f64;
        assert!(
            (frac - config.dominant_frac).abs() < 0.15,
            "dominant fraction {frac:.3}"
        );
        assert!(corpus.detections.values().any(|boxes| boxes.len() >= 2));
    }

    #[test]
    fn ground_truth_round_trips() {
        let config = small_config();
        let (pinjoins, index) = pipeline(&config);
        let (_, truth) = generate_engagement(&pinjoins, &index, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ground_truth.jsonl");
        write_ground_truth(&path, &truth).unwrap();
        assert_eq!(read_ground_truth(&path).unwrap(), truth);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ok = small_config();
        assert!(ok.validate().is_ok());
        let cases = [
            SynthConfig { n_images: 0, ..ok.clone() },
            SynthConfig { sub_topics: 0, ..ok.clone() },
            SynthConfig { pins_per_board: (5, 3), ..ok.clone() },
            SynthConfig { position_bias: vec![0.2, 0.2], ..ok.clone() },
            SynthConfig { position_bias: vec![], ..ok.clone() },
            SynthConfig { position_bias: vec![1.5, 0.2], ..ok.clone() },
            SynthConfig { noise: 0.5, ..ok.clone() },
            SynthConfig { relevance_model: vec![1.0; 3], ..ok.clone() },
            SynthConfig { n_bits: 10, ..ok.clone() },
            SynthConfig { dominant_frac: 1.2, ..ok.clone() },
            SynthConfig { slate_pool: 0, ..ok },
        ];
        for case in cases {
            assert!(matches!(case.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
