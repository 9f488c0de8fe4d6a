//! kindred-core: an item-to-item recommendation engine driven by board
//! co-occurrence and content-based re-ranking.
//!
//! The pipeline has two stages. Candidate generation walks the curation
//! graph (images grouped onto boards by users) and, for every image,
//! collects the other images it shares the most boards with. Ranking then
//! re-orders those candidates with a linear model over content features:
//! text annotation overlap, topic/category vectors, and visual similarity
//! between binarized and sparsified embedding codes. Training data for the
//! ranker is mined from engagement logs with a clicks-over-expected-clicks
//! (COEC) position-debiasing model and fit as a pairwise hinge objective
//! over relevance triplets.
//!
//! Modules follow the pipeline order:
//!
//! - [`corpus`] — data model and ingestion: pins, boards, embeddings,
//!   detections, and the per-image `PinJoin` aggregate.
//! - [`candgen`] — board co-occurrence candidate generation, Hamming-code
//!   fallback retrieval, and co-occurrence statistics.
//! - [`features`] — pairwise and query-independent ranking features,
//!   object-detection gating, and feature-vector assembly.
//! - [`training`] — COEC tables, triplet mining, and the linear rank model.
//! - [`ranking`] — scoring, per-query ranking, and batch materialization.
//! - [`synth`] — seeded synthetic corpora and engagement logs with known
//!   latent structure, for offline evaluation.

pub mod bits;
pub mod candgen;
pub mod corpus;
mod error;
pub mod features;
pub mod jsonl;
pub mod ranking;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
