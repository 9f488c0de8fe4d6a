//! Candidate generation from board co-occurrence.
//!
//! Two images are related when they appear on the same boards; each image's
//! candidates are the others ranked by distinct shared-board count. Large
//! boards contribute only their best members (quality x log-popularity).
//! Images with too few co-occurrence candidates are topped up by a Hamming
//! nearest-neighbor fallback over binary codes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BoardJoin, ImageSig, PinJoinSet};
use crate::jsonl::{self, JsonlWriter};
use crate::{Error, Result};

/// Candidate generation parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Hard cap on co-occurrence candidates per image.
    pub max_candidates: usize,
    /// Boards with more members contribute only a sampled subset.
    /// `usize::MAX` disables sampling.
    pub max_board_sample: usize,
    /// Images with fewer co-occurrence candidates are topped up from the
    /// content-based fallback to reach this count.
    pub min_candidates_before_fallback: usize,
    /// Neighbors retrieved per fallback lookup.
    pub fallback_k: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_candidates: 10_000,
            max_board_sample: 50,
            min_candidates_before_fallback: 20,
            fallback_k: 100,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_candidates == 0 || self.min_candidates_before_fallback == 0 || self.fallback_k == 0
        {
            return Err(Error::InvalidConfig(
                "candidate generation counts must be positive".into(),
            ));
        }
        if self.max_board_sample < 2 {
            return Err(Error::InvalidConfig(
                "max_board_sample must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Cooccurrence,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub image: ImageSig,
    /// Number of distinct boards shared with the query; 0 for fallback.
    #[serde(rename = "count")]
    pub shared_board_count: u32,
    pub source: CandidateSource,
}

/// Per-image candidate lists, each sorted by (count desc, ImageSig asc),
/// with fallback entries appended after all co-occurrence entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateIndex {
    pub entries: BTreeMap<ImageSig, Vec<CandidateEntry>>,
    pub params: GenConfig,
}

impl CandidateIndex {
    pub fn get(&self, image: &ImageSig) -> Option<&[CandidateEntry]> {
        self.entries.get(image).map(Vec::as_slice)
    }
}

/// Builds the candidate index from boards. Board members are resolved to
/// images through the PinJoin pin lists; every image in `pinjoins` gets an
/// entry, possibly empty.
pub fn generate_candidates(
    boards: &BTreeMap<String, BoardJoin>,
    pinjoins: &PinJoinSet,
    config: &GenConfig,
) -> Result<CandidateIndex> {
    let pin_to_image: HashMap<&str, &ImageSig> = pinjoins
        .iter()
        .flat_map(|j| j.pins.iter().map(move |p| (p.as_str(), &j.image)))
        .collect();

    let image_boards: Vec<Vec<ImageSig>> = boards
        .values()
        .map(|b| {
            let distinct: BTreeSet<&ImageSig> = b
                .pins
                .iter()
                .filter_map(|p| pin_to_image.get(p.as_str()).copied())
                .collect();
            distinct.into_iter().cloned().collect()
        })
        .collect();

    generate_from_image_lists(&image_boards, pinjoins, config)
}

/// Core co-occurrence counter over explicit per-board image lists.
/// Duplicate images within one list count once.
pub fn generate_from_image_lists(
    image_boards: &[Vec<ImageSig>],
    pinjoins: &PinJoinSet,
    config: &GenConfig,
) -> Result<CandidateIndex> {
    config.validate()?;

    let images: Vec<&ImageSig> = pinjoins.images().collect();
    let id_of: HashMap<&ImageSig, u32> = images
        .iter()
        .enumerate()
        .map(|(i, &sig)| (sig, i as u32))
        .collect();
    // sampling score per image; id order equals ImageSig order
    let sample_score: Vec<f64> = pinjoins
        .iter()
        .map(|j| j.quality * (1.0 + j.popularity as f64).ln())
        .collect();

    let boards_as_ids: Vec<Vec<u32>> = image_boards
        .iter()
        .map(|board| {
            let mut ids: Vec<u32> = board
                .iter()
                .filter_map(|sig| id_of.get(sig).copied())
                .collect::<BTreeSet<u32>>()
                .into_iter()
                .collect();
            if ids.len() > config.max_board_sample {
                ids.sort_by(|&a, &b| {
                    sample_score[b as usize]
                        .total_cmp(&sample_score[a as usize])
                        .then(a.cmp(&b))
                });
                ids.truncate(config.max_board_sample);
                ids.sort_unstable();
            }
            ids
        })
        .collect();

    let pair_counts: HashMap<(u32, u32), u32> = boards_as_ids
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<(u32, u32), u32>, ids| {
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    *acc.entry((a, b)).or_insert(0) += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut left, right| {
            for (pair, count) in right {
                *left.entry(pair).or_insert(0) += count;
            }
            left
        });

    let mut lists: Vec<Vec<(u32, u32)>> = vec![Vec::new(); images.len()];
    for (&(a, b), &count) in &pair_counts {
        lists[a as usize].push((b, count));
        lists[b as usize].push((a, count));
    }

    let mut entries = BTreeMap::new();
    for (id, mut list) in lists.into_iter().enumerate() {
        list.sort_unstable_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        list.truncate(config.max_candidates);
        let mut candidates: Vec<CandidateEntry> = list
            .into_iter()
            .map(|(cand, count)| CandidateEntry {
                image: images[cand as usize].clone(),
                shared_board_count: count,
                source: CandidateSource::Cooccurrence,
            })
            .collect();

        let query = images[id];
        if candidates.len() < config.min_candidates_before_fallback
            && pinjoins.get(query).is_some_and(|j| j.has_visual())
        {
            let present: BTreeSet<&ImageSig> = candidates.iter().map(|c| &c.image).collect();
            let mut extra: Vec<CandidateEntry> = fallback_candidates(query, pinjoins, config.fallback_k)?
                .into_iter()
                .filter(|e| !present.contains(&e.image))
                .take(config.min_candidates_before_fallback - candidates.len())
                .collect();
            // the index orders every segment by (count desc, sig asc); the
            // fallback segment all has count 0, so proximity order is not
            // preserved here
            extra.sort_by(|a, b| a.image.cmp(&b.image));
            candidates.extend(extra);
        }

        entries.insert(query.clone(), candidates);
    }

    Ok(CandidateIndex {
        entries,
        params: config.clone(),
    })
}

/// The k nearest neighbors of `query` by Hamming distance over binary
/// codes, excluding the query itself; ties break by ImageSig ascending.
/// Images without codes cannot be retrieved or queried.
pub fn fallback_candidates(
    query: &ImageSig,
    pinjoins: &PinJoinSet,
    k: usize,
) -> Result<Vec<CandidateEntry>> {
    let join = pinjoins
        .get(query)
        .ok_or_else(|| Error::UnknownImage(query.clone()))?;
    let code = join
        .binary_code
        .as_ref()
        .ok_or_else(|| Error::NoVisual(query.clone()))?;

    let mut scored: Vec<(u32, &ImageSig)> = Vec::new();
    for other in pinjoins.iter() {
        if other.image == *query {
            continue;
        }
        if let Some(other_code) = &other.binary_code {
            scored.push((code.hamming_distance(other_code)?, &other.image));
        }
    }
    scored.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(_, image)| CandidateEntry {
            image: image.clone(),
            shared_board_count: 0,
            source: CandidateSource::Fallback,
        })
        .collect())
}

/// Distribution of shared-board counts over the distinct unordered image
/// pairs present in the index (co-occurrence entries only). Values are
/// fractions summing to 1; empty index gives an empty map.
pub fn cooccurrence_histogram(index: &CandidateIndex) -> BTreeMap<u32, f64> {
    let mut pairs: BTreeMap<(&ImageSig, &ImageSig), u32> = BTreeMap::new();
    for (query, candidates) in &index.entries {
        for entry in candidates {
            if entry.source != CandidateSource::Cooccurrence {
                continue;
            }
            let key = if *query < entry.image {
                (query, &entry.image)
            } else {
                (&entry.image, query)
            };
            pairs.insert(key, entry.shared_board_count);
        }
    }
    let total = pairs.len() as f64;
    let mut histogram: BTreeMap<u32, f64> = BTreeMap::new();
    for count in pairs.into_values() {
        *histogram.entry(count).or_insert(0.0) += 1.0;
    }
    for fraction in histogram.values_mut() {
        *fraction /= total;
    }
    histogram
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    image: ImageSig,
    candidates: Vec<CandidateEntry>,
}

/// Writes the index, one query per line, sorted by query ImageSig.
pub fn write_index(index: &CandidateIndex, path: &std::path::Path) -> Result<()> {
    let mut writer = JsonlWriter::create(path)?;
    for (image, candidates) in &index.entries {
        writer.write(&IndexRecord {
            image: image.clone(),
            candidates: candidates.clone(),
        })?;
    }
    writer.finish()
}

/// Reads an index written by `write_index`. Generation parameters are not
/// part of the file format, so `params` is restored as defaults.
pub fn load_index(path: &std::path::Path) -> Result<CandidateIndex> {
    let records: Vec<IndexRecord> = jsonl::read_all(path)?;
    Ok(CandidateIndex {
        entries: records
            .into_iter()
            .map(|r| (r.image, r.candidates))
            .collect(),
        params: GenConfig::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BinaryCode;
    use crate::corpus::PinJoin;
    use proptest::prelude::*;

    fn sig(name: &str) -> ImageSig {
        ImageSig::new(name)
    }

    fn plain_join(name: &str) -> PinJoin {
        PinJoin {
            image: sig(name),
            pins: vec![format!("{name}-pin")],
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
        }
    }

    fn joins_named(names: &[&str]) -> PinJoinSet {
        PinJoinSet::from_joins(names.iter().map(|n| plain_join(n)), 8, 2)
    }

    fn boards_of(boards: &[&[&str]]) -> Vec<Vec<ImageSig>> {
        boards
            .iter()
            .map(|b| b.iter().map(|n| sig(n)).collect())
            .collect()
    }

    fn no_fallback_config() -> GenConfig {
        GenConfig {
            max_board_sample: usize::MAX,
            min_candidates_before_fallback: 1,
            ..GenConfig::default()
        }
    }

    fn counts_of(index: &CandidateIndex, query: &str) -> Vec<(String, u32)> {
        index.entries[&sig(query)]
            .iter()
            .map(|e| (e.image.as_str().to_owned(), e.shared_board_count))
            .collect()
    }

    #[test]
    fn three_board_example() {
        let pinjoins = joins_named(&["A", "B", "C"]);
        let boards = boards_of(&[&["A", "B", "C"], &["A", "B"], &["A", "C"]]);
        let index = generate_from_image_lists(&boards, &pinjoins, &no_fallback_config()).unwrap();

        assert_eq!(counts_of(&index, "A"), vec![("B".into(), 2), ("C".into(), 2)]);
        assert_eq!(counts_of(&index, "B"), vec![("A".into(), 2), ("C".into(), 1)]);
        assert_eq!(counts_of(&index, "C"), vec![("A".into(), 2), ("B".into(), 1)]);
    }

    #[test]
    fn single_pin_board_yields_empty_lists() {
        let pinjoins = joins_named(&["A"]);
        let boards = boards_of(&[&["A"]]);
        let index = generate_from_image_lists(&boards, &pinjoins, &no_fallback_config()).unwrap();
        assert_eq!(index.entries[&sig("A")], Vec::new());
    }

    #[test]
    fn duplicate_image_on_one_board_counts_once() {
        let pinjoins = joins_named(&["A", "B"]);
        let boards = boards_of(&[&["A", "B", "A"]]);
        let index = generate_from_image_lists(&boards, &pinjoins, &no_fallback_config()).unwrap();
        assert_eq!(counts_of(&index, "A"), vec![("B".into(), 1)]);
    }

    #[test]
    fn cap_keeps_highest_counts() {
        let names: Vec<String> = (0..6).map(|i| format!("img{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let pinjoins = joins_named(&refs);
        // img0 shares i boards with img_i
        let mut boards = Vec::new();
        for (i, name) in names.iter().enumerate().skip(1) {
            for _ in 0..i {
                boards.push(vec![sig("img0"), sig(name)]);
            }
        }
        let config = GenConfig {
            max_candidates: 3,
            ..no_fallback_config()
        };
        let index = generate_from_image_lists(&boards, &pinjoins, &config).unwrap();
        assert_eq!(
            counts_of(&index, "img0"),
            vec![("img5".into(), 5), ("img4".into(), 4), ("img3".into(), 3)]
        );
    }

    #[test]
    fn sampling_keeps_top_quality_members() {
        let mut joins: Vec<PinJoin> = Vec::new();
        for (name, quality) in [("A", 0.9), ("B", 0.8), ("C", 0.2), ("D", 0.1)] {
            let mut j = plain_join(name);
            j.quality = quality;
            joins.push(j);
        }
        let pinjoins = PinJoinSet::from_joins(joins, 8, 2);
        let boards = boards_of(&[&["A", "B", "C", "D"]]);
        let config = GenConfig {
            max_board_sample: 2,
            min_candidates_before_fallback: 1,
            ..GenConfig::default()
        };
        let index = generate_from_image_lists(&boards, &pinjoins, &config).unwrap();
        assert_eq!(counts_of(&index, "A"), vec![("B".into(), 1)]);
        assert_eq!(counts_of(&index, "C"), Vec::new());
    }

    fn code_join(name: &str, byte: u8) -> PinJoin {
        let mut j = plain_join(name);
        j.binary_code = Some(BinaryCode::from_hex(&format!("{byte:02x}"), 8).unwrap());
        j
    }

    #[test]
    fn fallback_ranks_exact_duplicate_first() {
        let pinjoins = PinJoinSet::from_joins(
            vec![
                code_join("q", 0b1111_0000),
                code_join("dup", 0b1111_0000),
                code_join("near", 0b1111_0001),
                code_join("far", 0b0000_1111),
            ],
            8,
            2,
        );
        let result = fallback_candidates(&sig("q"), &pinjoins, 10).unwrap();
        let names: Vec<&str> = result.iter().map(|e| e.image.as_str()).collect();
        assert_eq!(names, vec!["dup", "near", "far"]);
        assert!(result.iter().all(|e| e.source == CandidateSource::Fallback));
        assert!(result.iter().all(|e| e.shared_board_count == 0));
    }

    #[test]
    fn fallback_truncates_to_available_corpus() {
        let pinjoins = PinJoinSet::from_joins(vec![code_join("q", 1), code_join("o", 2)], 8, 2);
        assert_eq!(fallback_candidates(&sig("q"), &pinjoins, 99).unwrap().len(), 1);
    }

    #[test]
    fn fallback_requires_binary_code() {
        let pinjoins = joins_named(&["q"]);
        assert!(matches!(
            fallback_candidates(&sig("q"), &pinjoins, 5),
            Err(Error::NoVisual(_))
        ));
    }

    #[test]
    fn fallback_tops_up_sparse_candidate_lists() {
        let joins = vec![
            code_join("A", 0b0000_0000),
            code_join("B", 0b0000_0001),
            code_join("C", 0b0000_0011),
            code_join("D", 0b1111_1111),
        ];
        let pinjoins = PinJoinSet::from_joins(joins, 8, 2);
        // A co-occurs with B only; fallback should top A up to 3 candidates
        let boards = boards_of(&[&["A", "B"]]);
        let config = GenConfig {
            max_board_sample: usize::MAX,
            min_candidates_before_fallback: 3,
            fallback_k: 10,
            ..GenConfig::default()
        };
        let index = generate_from_image_lists(&boards, &pinjoins, &config).unwrap();
        let list = &index.entries[&sig("A")];
        assert_eq!(list.len(), 3);
        assert_eq!(list[0].source, CandidateSource::Cooccurrence);
        assert_eq!(list[0].image, sig("B"));
        // fallback segment excludes the co-occurrence entry and is sig-sorted
        assert_eq!(list[1].image, sig("C"));
        assert_eq!(list[1].source, CandidateSource::Fallback);
        assert_eq!(list[2].image, sig("D"));
    }

    #[test]
    fn histogram_matches_three_board_example() {
        let pinjoins = joins_named(&["A", "B", "C"]);
        let boards = boards_of(&[&["A", "B", "C"], &["A", "B"], &["A", "C"]]);
        let index = generate_from_image_lists(&boards, &pinjoins, &no_fallback_config()).unwrap();
        let histogram = cooccurrence_histogram(&index);
        assert_eq!(histogram.len(), 2);
        assert!((histogram[&1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((histogram[&2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((histogram.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_of_disjoint_singletons_is_empty() {
        let pinjoins = joins_named(&["A", "B"]);
        let boards = boards_of(&[&["A"], &["B"]]);
        let index = generate_from_image_lists(&boards, &pinjoins, &no_fallback_config()).unwrap();
        assert!(cooccurrence_histogram(&index).is_empty());
    }

    #[test]
    fn index_round_trips_through_file() {
        let pinjoins = joins_named(&["A", "B", "C"]);
        let boards = boards_of(&[&["A", "B", "C"], &["A", "B"]]);
        let index = generate_from_image_lists(&boards, &pinjoins, &no_fallback_config()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        write_index(&index, &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded.entries, index.entries);
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let pinjoins = joins_named(&["A", "B", "C", "D", "E"]);
        let boards = boards_of(&[
            &["A", "B", "C"],
            &["B", "C", "D"],
            &["C", "D", "E"],
            &["A", "E"],
        ]);
        let dir = tempfile::tempdir().unwrap();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let index =
                generate_from_image_lists(&boards, &pinjoins, &GenConfig::default()).unwrap();
            let path = dir.path().join(format!("index{run}.jsonl"));
            write_index(&index, &path).unwrap();
            outputs.push(std::fs::read(path).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
    }

    fn brute_force(
        image_boards: &[Vec<ImageSig>],
        pinjoins: &PinJoinSet,
        max_candidates: usize,
    ) -> BTreeMap<ImageSig, Vec<CandidateEntry>> {
        let mut counts: BTreeMap<(ImageSig, ImageSig), u32> = BTreeMap::new();
        for board in image_boards {
            let distinct: BTreeSet<&ImageSig> =
                board.iter().filter(|s| pinjoins.contains(s)).collect();
            let members: Vec<&ImageSig> = distinct.into_iter().collect();
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    *counts.entry((a.clone(), b.clone())).or_insert(0) += 1;
                }
            }
        }
        let mut out: BTreeMap<ImageSig, Vec<CandidateEntry>> = pinjoins
            .images()
            .map(|s| (s.clone(), Vec::new()))
            .collect();
        for ((a, b), count) in counts {
            for (query, cand) in [(a.clone(), b.clone()), (b, a)] {
                out.get_mut(&query).unwrap().push(CandidateEntry {
                    image: cand,
                    shared_board_count: count,
                    source: CandidateSource::Cooccurrence,
                });
            }
        }
        for list in out.values_mut() {
            list.sort_by(|x, y| {
                y.shared_board_count
                    .cmp(&x.shared_board_count)
                    .then(x.image.cmp(&y.image))
            });
            list.truncate(max_candidates);
        }
        out
    }

    proptest! {
        #[test]
        fn matches_brute_force_with_sampling_disabled(
            board_specs in prop::collection::vec(
                prop::collection::vec(0usize..15, 0..8),
                0..12,
            ),
        ) {
            let names: Vec<String> = (0..15).map(|i| format!("img{i:02}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let pinjoins = joins_named(&refs);
            let boards: Vec<Vec<ImageSig>> = board_specs
                .iter()
                .map(|b| b.iter().map(|&i| sig(&names[i])).collect())
                .collect();

            let index =
                generate_from_image_lists(&boards, &pinjoins, &no_fallback_config()).unwrap();
            let oracle = brute_force(&boards, &pinjoins, 10_000);
            prop_assert_eq!(&index.entries, &oracle);
        }

        #[test]
        fn counts_are_symmetric_without_sampling(
            board_specs in prop::collection::vec(
                prop::collection::vec(0usize..10, 2..6),
                1..10,
            ),
        ) {
            let names: Vec<String> = (0..10).map(|i| format!("img{i}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let pinjoins = joins_named(&refs);
            let boards: Vec<Vec<ImageSig>> = board_specs
                .iter()
                .map(|b| b.iter().map(|&i| sig(&names[i])).collect())
                .collect();
            let index =
                generate_from_image_lists(&boards, &pinjoins, &no_fallback_config()).unwrap();

            for (query, list) in &index.entries {
                for entry in list {
                    let reverse = index.entries[&entry.image]
                        .iter()
                        .find(|e| &e.image == query)
                        .expect("symmetric entry");
                    prop_assert_eq!(reverse.shared_board_count, entry.shared_board_count);
                }
            }
        }
    }
}
