//! Curation-graph data model: pins, boards, and their aggregation into
//! per-image PinJoins with merged annotations and visual metadata.
//!
//! Ingestion reads line-delimited JSON (`pins.jsonl`, `boards.jsonl`,
//! `embeddings.jsonl`, optional `detections.jsonl` and `crops.jsonl`) and
//! resolves all cross-references. Aggregation is a pure fold over canonical
//! (sorted) ordering, so shuffled input lines produce identical output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bits::BinaryCode;
use crate::jsonl::{self, JsonlWriter, RecordIssue};
use crate::{Error, Result};

/// Binary code length when the embeddings header does not declare one.
pub const DEFAULT_N_BITS: usize = 4096;
/// Topic vector dimension when the embeddings header does not declare one.
pub const DEFAULT_TOPIC_DIM: usize = 64;
/// Size of the site-wide category vocabulary.
pub const NUM_CATEGORIES: usize = 32;

/// Content signature uniquely identifying an image. Ordering is plain
/// lexicographic string order and is used everywhere ties must break
/// deterministically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageSig(pub String);

impl ImageSig {
    pub fn new(value: impl Into<String>) -> Self {
        ImageSig(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ImageSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageSig({})", self.0)
    }
}

impl fmt::Display for ImageSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageSig {
    fn from(value: &str) -> Self {
        ImageSig(value.to_owned())
    }
}

/// One saved pin: an image bookmarked to a board with a text description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    pub pin_id: String,
    pub image: ImageSig,
    pub board_id: String,
    pub description_tokens: Vec<String>,
    pub created_at: i64,
}

/// A board title joined with its member pins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardJoin {
    pub board_id: String,
    pub title_tokens: Vec<String>,
    /// Member pin ids, sorted; non-empty for every retained board.
    pub pins: Vec<String>,
    pub category_id: Option<u8>,
}

/// An axis-aligned detection box in fractional image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub label: String,
    pub confidence: f64,
}

impl Detection {
    /// Fraction of the image covered by this box.
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(format!("box has non-positive size {}x{}", self.w, self.h));
        }
        if self.x < 0.0 || self.y < 0.0 || self.x + self.w > 1.0 || self.y + self.h > 1.0 {
            return Err("box extends outside the unit image square".into());
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0,1]", self.confidence));
        }
        Ok(())
    }
}

/// Visual metadata for one image as read from the embeddings file.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    pub binary_code: BinaryCode,
    pub sparse_vec: BTreeMap<u32, f64>,
    pub topic_vec: Vec<f64>,
    pub category_vec: BTreeMap<u8, f64>,
    pub quality: f64,
}

/// In-memory corpus with all cross-references resolved. Immutable after
/// ingestion; safe to share across threads.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    /// Pins keyed by pin_id.
    pub pins: BTreeMap<String, Pin>,
    /// Boards keyed by board_id, member pin lists filled and sorted.
    pub boards: BTreeMap<String, BoardJoin>,
    /// Whole-image embeddings keyed by ImageSig.
    pub embeddings: BTreeMap<ImageSig, ImageEmbedding>,
    /// Object-crop embeddings keyed by ImageSig (optional input).
    pub crops: BTreeMap<ImageSig, ImageEmbedding>,
    /// Detection boxes keyed by ImageSig (optional input).
    pub detections: BTreeMap<ImageSig, Vec<Detection>>,
    pub n_bits: usize,
    pub topic_dim: usize,
}

/// Aggregate of all pins sharing one image.
///
/// Visual fields are absent (`binary_code == None`, empty maps) when the
/// image had no embeddings record; such images stay in the corpus and are
/// excluded from visual features only.
#[derive(Debug, Clone, PartialEq)]
pub struct PinJoin {
    pub image: ImageSig,
    /// Member pin ids, sorted.
    pub pins: Vec<String>,
    /// Token counts aggregated from member pin descriptions plus each
    /// member's board title (title tokens counted once per member pin).
    pub annotations: BTreeMap<String, u32>,
    /// Save count; always equals `pins.len()`.
    pub popularity: u32,
    pub binary_code: Option<BinaryCode>,
    pub sparse_vec: BTreeMap<u32, f64>,
    pub topic_vec: Vec<f64>,
    pub category_vec: BTreeMap<u8, f64>,
    pub crop_binary_code: Option<BinaryCode>,
    pub crop_sparse_vec: BTreeMap<u32, f64>,
    pub detections: Vec<Detection>,
    pub quality: f64,
}

impl PinJoin {
    pub fn has_visual(&self) -> bool {
        self.binary_code.is_some()
    }

    pub fn has_crop(&self) -> bool {
        self.crop_binary_code.is_some()
    }
}

/// All PinJoins of a corpus plus the corpus-wide constants features need.
#[derive(Debug, Clone, Default)]
pub struct PinJoinSet {
    joins: BTreeMap<ImageSig, PinJoin>,
    pub n_bits: usize,
    pub topic_dim: usize,
    /// Maximum save count across the set; 0 only when the set is empty.
    pub max_popularity: u32,
}

impl PinJoinSet {
    /// Builds a set directly from joins; `max_popularity` is derived.
    pub fn from_joins(
        joins: impl IntoIterator<Item = PinJoin>,
        n_bits: usize,
        topic_dim: usize,
    ) -> Self {
        let joins: BTreeMap<ImageSig, PinJoin> =
            joins.into_iter().map(|j| (j.image.clone(), j)).collect();
        let max_popularity = joins.values().map(|j| j.popularity).max().unwrap_or(0);
        PinJoinSet {
            joins,
            n_bits,
            topic_dim,
            max_popularity,
        }
    }

    pub fn get(&self, image: &ImageSig) -> Option<&PinJoin> {
        self.joins.get(image)
    }

    pub fn contains(&self, image: &ImageSig) -> bool {
        self.joins.contains_key(image)
    }

    /// PinJoins in ascending ImageSig order.
    pub fn iter(&self) -> impl Iterator<Item = &PinJoin> {
        self.joins.values()
    }

    /// Image signatures in ascending order.
    pub fn images(&self) -> impl Iterator<Item = &ImageSig> {
        self.joins.keys()
    }

    pub fn len(&self) -> usize {
        self.joins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joins.is_empty()
    }
}

/// Lowercases, splits on non-alphanumeric characters, and drops tokens
/// shorter than 2 characters. No stemming.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_owned)
        .collect()
}

/// Builds one PinJoin per distinct image referenced by the corpus pins.
pub fn build_pinjoins(corpus: &Corpus) -> PinJoinSet {
    let mut grouped: BTreeMap<ImageSig, Vec<&Pin>> = BTreeMap::new();
    for pin in corpus.pins.values() {
        grouped.entry(pin.image.clone()).or_default().push(pin);
    }

    let mut joins = BTreeMap::new();
    let mut max_popularity = 0u32;
    for (image, members) in grouped {
        let mut annotations: BTreeMap<String, u32> = BTreeMap::new();
        let mut pin_ids = Vec::with_capacity(members.len());
        for pin in &members {
            pin_ids.push(pin.pin_id.clone());
            for token in &pin.description_tokens {
                *annotations.entry(token.clone()).or_insert(0) += 1;
            }
            if let Some(board) = corpus.boards.get(&pin.board_id) {
                for token in &board.title_tokens {
                    *annotations.entry(token.clone()).or_insert(0) += 1;
                }
            }
        }
        let popularity = pin_ids.len() as u32;
        max_popularity = max_popularity.max(popularity);

        let embedding = corpus.embeddings.get(&image);
        let crop = corpus.crops.get(&image);
        joins.insert(
            image.clone(),
            PinJoin {
                image: image.clone(),
                pins: pin_ids,
                annotations,
                popularity,
                binary_code: embedding.map(|e| e.binary_code.clone()),
                sparse_vec: embedding.map(|e| e.sparse_vec.clone()).unwrap_or_default(),
                topic_vec: embedding.map(|e| e.topic_vec.clone()).unwrap_or_default(),
                category_vec: embedding.map(|e| e.category_vec.clone()).unwrap_or_default(),
                crop_binary_code: crop.map(|e| e.binary_code.clone()),
                crop_sparse_vec: crop.map(|e| e.sparse_vec.clone()).unwrap_or_default(),
                detections: corpus.detections.get(&image).cloned().unwrap_or_default(),
                quality: embedding.map(|e| e.quality).unwrap_or(0.0),
            },
        );
    }

    PinJoinSet {
        joins,
        n_bits: corpus.n_bits,
        topic_dim: corpus.topic_dim,
        max_popularity,
    }
}

/// Input file locations for one corpus.
#[derive(Debug, Clone)]
pub struct IngestPaths {
    pub pins: PathBuf,
    pub boards: PathBuf,
    pub embeddings: PathBuf,
    pub detections: Option<PathBuf>,
    pub crops: Option<PathBuf>,
}

impl IngestPaths {
    /// Conventional file names inside one directory; detections and crops
    /// are picked up only when present.
    pub fn in_dir(dir: &Path) -> Self {
        let optional = |name: &str| {
            let p = dir.join(name);
            p.is_file().then_some(p)
        };
        IngestPaths {
            pins: dir.join("pins.jsonl"),
            boards: dir.join("boards.jsonl"),
            embeddings: dir.join("embeddings.jsonl"),
            detections: optional("detections.jsonl"),
            crops: optional("crops.jsonl"),
        }
    }
}

/// What ingestion skipped or flagged.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub issues: Vec<RecordIssue>,
    pub pins_ingested: usize,
    pub boards_ingested: usize,
    /// Boards present in the boards file but with no valid member pins.
    pub boards_dropped_empty: usize,
    /// Distinct pinned images lacking an embeddings record.
    pub images_without_embedding: usize,
}

#[derive(Debug)]
pub struct Ingested {
    pub corpus: Corpus,
    pub report: IngestReport,
}

#[derive(Deserialize)]
struct PinRecord {
    pin_id: String,
    image: String,
    board_id: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    created_at: i64,
}

#[derive(Deserialize)]
struct BoardRecord {
    board_id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    category_id: Option<u8>,
}

#[derive(Deserialize)]
struct EmbeddingHeader {
    #[serde(default)]
    n_bits: Option<usize>,
    #[serde(default)]
    topic_dim: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    image: String,
    binary_code: String,
    #[serde(default)]
    sparse_vec: BTreeMap<u32, f64>,
    #[serde(default)]
    topic_vec: Vec<f64>,
    #[serde(default)]
    category_vec: BTreeMap<u8, f64>,
    #[serde(default = "default_quality")]
    quality: f64,
}

fn default_quality() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    image: String,
    boxes: Vec<Detection>,
}

struct IssueSink {
    issues: Vec<RecordIssue>,
    strict: bool,
}

impl IssueSink {
    /// Records one line-level problem; aborts the whole ingest in strict mode.
    fn report(&mut self, path: &Path, line: usize, message: String) -> Result<()> {
        if self.strict {
            return Err(Error::record(path, line, message));
        }
        self.issues.push(RecordIssue {
            path: path.display().to_string(),
            line,
            message,
        });
        Ok(())
    }
}

/// Reads and cross-checks all corpus files. In strict mode the first bad
/// record aborts with its line number; otherwise bad records are skipped
/// and reported.
pub fn ingest(paths: &IngestPaths, strict: bool) -> Result<Ingested> {
    let mut sink = IssueSink {
        issues: Vec::new(),
        strict,
    };
    let mut corpus = Corpus {
        n_bits: DEFAULT_N_BITS,
        topic_dim: DEFAULT_TOPIC_DIM,
        ..Corpus::default()
    };

    ingest_boards(&paths.boards, &mut corpus, &mut sink)?;
    ingest_pins(&paths.pins, &mut corpus, &mut sink)?;
    let (n_bits, topic_dim) = ingest_embedding_file(&paths.embeddings, &mut sink, None, |image, emb| {
        corpus.embeddings.insert(image, emb);
    })?;
    corpus.n_bits = n_bits;
    corpus.topic_dim = topic_dim;
    if let Some(crops_path) = &paths.crops {
        // crop codes must be comparable with whole-image codes
        let expected = (corpus.n_bits, corpus.topic_dim);
        ingest_embedding_file(crops_path, &mut sink, Some(expected), |image, emb| {
            corpus.crops.insert(image, emb);
        })?;
    }
    if let Some(det_path) = &paths.detections {
        ingest_detections(det_path, &mut corpus, &mut sink)?;
    }

    // fill board memberships from the sorted pin map so member order is
    // independent of input line order
    for pin in corpus.pins.values() {
        if let Some(board) = corpus.boards.get_mut(&pin.board_id) {
            board.pins.push(pin.pin_id.clone());
        }
    }
    let before = corpus.boards.len();
    corpus.boards.retain(|_, b| !b.pins.is_empty());

    let mut report = IngestReport {
        issues: sink.issues,
        pins_ingested: corpus.pins.len(),
        boards_ingested: corpus.boards.len(),
        boards_dropped_empty: before - corpus.boards.len(),
        images_without_embedding: 0,
    };
    let mut seen = std::collections::BTreeSet::new();
    for pin in corpus.pins.values() {
        if seen.insert(&pin.image) && !corpus.embeddings.contains_key(&pin.image) {
            report.images_without_embedding += 1;
        }
    }

    Ok(Ingested { corpus, report })
}

fn ingest_boards(path: &Path, corpus: &mut Corpus, sink: &mut IssueSink) -> Result<()> {
    jsonl::for_each_line(path, |line_no, line| {
        let record: BoardRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return sink.report(path, line_no, e.to_string()),
        };
        if record.board_id.is_empty() {
            return sink.report(path, line_no, "empty board_id".into());
        }
        if let Some(cat) = record.category_id {
            if cat as usize >= NUM_CATEGORIES {
                return sink.report(
                    path,
                    line_no,
                    format!("category_id {cat} outside [0,{NUM_CATEGORIES})"),
                );
            }
        }
        if corpus.boards.contains_key(&record.board_id) {
            return sink.report(path, line_no, format!("duplicate board_id {}", record.board_id));
        }
        corpus.boards.insert(
            record.board_id.clone(),
            BoardJoin {
                board_id: record.board_id,
                title_tokens: normalize_tokens(&record.title),
                pins: Vec::new(),
                category_id: record.category_id,
            },
        );
        Ok(())
    })
}

fn ingest_pins(path: &Path, corpus: &mut Corpus, sink: &mut IssueSink) -> Result<()> {
    jsonl::for_each_line(path, |line_no, line| {
        let record: PinRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return sink.report(path, line_no, e.to_string()),
        };
        if record.pin_id.is_empty() || record.image.is_empty() {
            return sink.report(path, line_no, "empty pin_id or image".into());
        }
        if corpus.pins.contains_key(&record.pin_id) {
            return sink.report(path, line_no, format!("duplicate pin_id {}", record.pin_id));
        }
        if !corpus.boards.contains_key(&record.board_id) {
            return sink.report(
                path,
                line_no,
                format!("pin {} references unknown board {}", record.pin_id, record.board_id),
            );
        }
        corpus.pins.insert(
            record.pin_id.clone(),
            Pin {
                pin_id: record.pin_id,
                image: ImageSig(record.image),
                board_id: record.board_id,
                description_tokens: normalize_tokens(&record.description),
                created_at: record.created_at,
            },
        );
        Ok(())
    })
}

/// Reads one embeddings-format file (whole-image or crops). The first line
/// must be a header declaring n_bits and topic_dim; `expected` pins those
/// constants when the file must agree with an already-read one.
fn ingest_embedding_file(
    path: &Path,
    sink: &mut IssueSink,
    expected: Option<(usize, usize)>,
    mut insert: impl FnMut(ImageSig, ImageEmbedding),
) -> Result<(usize, usize)> {
    let mut n_bits = expected.map_or(DEFAULT_N_BITS, |e| e.0);
    let mut topic_dim = expected.map_or(DEFAULT_TOPIC_DIM, |e| e.1);
    let mut header_seen = false;
    let mut seen_images = std::collections::BTreeSet::new();

    jsonl::for_each_line(path, |line_no, line| {
        if !header_seen {
            header_seen = true;
            let value: serde_json::Value = match serde_json::from_str(line) {
                Ok(v) => v,
                Err(e) => return sink.report(path, line_no, e.to_string()),
            };
            if value.get("image").is_none() {
                let header: EmbeddingHeader =
                    serde_json::from_value(value).unwrap_or(EmbeddingHeader {
                        n_bits: None,
                        topic_dim: None,
                    });
                let declared_bits = header.n_bits.unwrap_or(n_bits);
                let declared_dim = header.topic_dim.unwrap_or(topic_dim);
                if let Some((exp_bits, exp_dim)) = expected {
                    if declared_bits != exp_bits || declared_dim != exp_dim {
                        return sink.report(
                            path,
                            line_no,
                            format!(
                                "header ({declared_bits}, {declared_dim}) disagrees with embeddings file ({exp_bits}, {exp_dim})"
                            ),
                        );
                    }
                }
                n_bits = declared_bits;
                topic_dim = declared_dim;
                return Ok(());
            }
            // first line is already a record: flag it, then parse it below
            sink.report(path, line_no, "missing header line, using defaults".into())?;
        }
        let record: EmbeddingRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return sink.report(path, line_no, e.to_string()),
        };
        let code = match BinaryCode::from_hex(&record.binary_code, n_bits) {
            Ok(c) => c,
            Err(e) => return sink.report(path, line_no, format!("image {}: {e}", record.image)),
        };
        if !record.topic_vec.is_empty() && record.topic_vec.len() != topic_dim {
            return sink.report(
                path,
                line_no,
                format!(
                    "image {}: topic_vec has {} entries, header declares {topic_dim}",
                    record.image,
                    record.topic_vec.len()
                ),
            );
        }
        if let Some((&cat, _)) = record
            .category_vec
            .iter()
            .find(|(&c, &v)| c as usize >= NUM_CATEGORIES || !(0.0..=1.0).contains(&v))
        {
            return sink.report(path, line_no, format!("image {}: bad category entry {cat}", record.image));
        }
        if !(0.0..=1.0).contains(&record.quality) {
            return sink.report(
                path,
                line_no,
                format!("image {}: quality {} outside [0,1]", record.image, record.quality),
            );
        }
        if !seen_images.insert(record.image.clone()) {
            return sink.report(path, line_no, format!("duplicate embedding for image {}", record.image));
        }
        let sparse_vec = record
            .sparse_vec
            .into_iter()
            .filter(|&(_, v)| v > 0.0)
            .collect();
        insert(
            ImageSig(record.image),
            ImageEmbedding {
                binary_code: code,
                sparse_vec,
                topic_vec: record.topic_vec,
                category_vec: record.category_vec,
                quality: record.quality,
            },
        );
        Ok(())
    })?;

    Ok((n_bits, topic_dim))
}

fn ingest_detections(path: &Path, corpus: &mut Corpus, sink: &mut IssueSink) -> Result<()> {
    jsonl::for_each_line(path, |line_no, line| {
        let record: DetectionRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return sink.report(path, line_no, e.to_string()),
        };
        for b in &record.boxes {
            if let Err(msg) = b.validate() {
                return sink.report(path, line_no, format!("image {}: {msg}", record.image));
            }
        }
        corpus.detections.insert(ImageSig(record.image), record.boxes);
        Ok(())
    })
}

/// Writes all corpus files into `dir` in canonical (sorted, token-joined)
/// form. Re-ingesting the output reproduces the corpus exactly.
pub fn write_dir(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut pins = JsonlWriter::create(&dir.join("pins.jsonl"))?;
    for pin in corpus.pins.values() {
        pins.write(&serde_json::json!({
            "pin_id": pin.pin_id,
            "image": pin.image,
            "board_id": pin.board_id,
            "description": pin.description_tokens.join(" "),
            "created_at": pin.created_at,
        }))?;
    }
    pins.finish()?;

    let mut boards = JsonlWriter::create(&dir.join("boards.jsonl"))?;
    for board in corpus.boards.values() {
        boards.write(&serde_json::json!({
            "board_id": board.board_id,
            "title": board.title_tokens.join(" "),
            "category_id": board.category_id,
        }))?;
    }
    boards.finish()?;

    write_embedding_file(
        &dir.join("embeddings.jsonl"),
        &corpus.embeddings,
        corpus.n_bits,
        corpus.topic_dim,
    )?;
    if !corpus.crops.is_empty() {
        write_embedding_file(&dir.join("crops.jsonl"), &corpus.crops, corpus.n_bits, corpus.topic_dim)?;
    }

    if !corpus.detections.is_empty() {
        let mut detections = JsonlWriter::create(&dir.join("detections.jsonl"))?;
        for (image, boxes) in &corpus.detections {
            detections.write(&DetectionRecord {
                image: image.as_str().to_owned(),
                boxes: boxes.clone(),
            })?;
        }
        detections.finish()?;
    }
    Ok(())
}

fn write_embedding_file(
    path: &Path,
    embeddings: &BTreeMap<ImageSig, ImageEmbedding>,
    n_bits: usize,
    topic_dim: usize,
) -> Result<()> {
    let mut writer = JsonlWriter::create(path)?;
    writer.write(&serde_json::json!({ "n_bits": n_bits, "topic_dim": topic_dim }))?;
    for (image, emb) in embeddings {
        writer.write(&EmbeddingRecord {
            image: image.as_str().to_owned(),
            binary_code: emb.binary_code.to_hex(),
            sparse_vec: emb.sparse_vec.clone(),
            topic_vec: emb.topic_vec.clone(),
            category_vec: emb.category_vec.clone(),
            quality: emb.quality,
        })?;
    }
    writer.finish()
}
