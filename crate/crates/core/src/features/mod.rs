//! Ranking features Φ(q, d): pair similarities, query-independent signals,
//! category cross features, and the object-dominance gate.
//!
//! All modes share the first five (graph/text) features. Visual modes add
//! fc6/fc8 similarities with per-side availability indicators; the cross
//! mode further multiplies query category weights into the fc6 similarity.
//! Variants change which query embedding is compared (whole image vs object
//! crop) and whether a dominant query object boosts the visual features.

mod objects;
mod similarity;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use objects::{
    dominant_object, iou, nms, DominanceResult, DEFAULT_NMS_IOU, DOMINANT_AREA_FRACTION,
    DOMINANT_CONFIDENCE,
};
pub use similarity::{
    annotation_similarity, binarize, cosine_similarity, dense_cosine, hamming_similarity, sparsify,
};

use crate::bits::BinaryCode;
use crate::corpus::{ImageSig, PinJoin, PinJoinSet, NUM_CATEGORIES};
use crate::{Error, Result};

/// Multiplier applied to both visual similarities when the query image has
/// a dominant object (variant_b and variant_c).
pub const GATE_BOOST: f64 = 5.0;
/// Default top-k kept when sparsifying dense activations.
pub const DEFAULT_SPARSE_K: usize = 32;

/// Which feature set a model is trained and scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Graph and text features only.
    Control,
    /// Control plus whole-image visual similarities and indicators.
    Visual,
    /// Visual plus 32 query-category × fc6 cross features.
    VisualCross,
    /// Visual, but a dominant query object is compared via its crop embedding.
    VariantA,
    /// VariantA plus the 5x dominant-object boost.
    VariantB,
    /// Visual (whole image) plus the 5x dominant-object boost.
    VariantC,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Control,
        Mode::Visual,
        Mode::VisualCross,
        Mode::VariantA,
        Mode::VariantB,
        Mode::VariantC,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Control => "control",
            Mode::Visual => "visual",
            Mode::VisualCross => "visual_cross",
            Mode::VariantA => "variant_a",
            Mode::VariantB => "variant_b",
            Mode::VariantC => "variant_c",
        }
    }

    fn uses_crop_embeddings(&self) -> bool {
        matches!(self, Mode::VariantA | Mode::VariantB)
    }

    fn gate_boost(&self) -> bool {
        matches!(self, Mode::VariantB | Mode::VariantC)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

/// Ordered feature names for one mode. The name list is the unit of
/// model/vector compatibility: modes sharing a name list (visual and the
/// variants) can score each other's vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub mode: Mode,
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn for_mode(mode: Mode) -> FeatureSchema {
        let mut names: Vec<String> = [
            "annotation_sim",
            "topic_sim",
            "category_sim",
            "cand_quality",
            "cand_popularity",
        ]
        .map(str::to_owned)
        .to_vec();
        if mode != Mode::Control {
            names.extend(
                ["fc6_sim", "fc8_sim", "query_has_visual", "cand_has_visual"].map(str::to_owned),
            );
        }
        if mode == Mode::VisualCross {
            names.extend((0..NUM_CATEGORIES).map(|c| format!("cross_cat_{c:02}")));
        }
        FeatureSchema { mode, names }
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }
}

/// Dense feature values aligned with a FeatureSchema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Query-side state reused across a whole candidate list: the resolved
/// PinJoin, its dominance flag, and the embedding actually compared
/// (object crop when the mode asks for it and one exists).
pub struct QueryContext<'a> {
    pub join: &'a PinJoin,
    pub dominant: bool,
    code: Option<&'a BinaryCode>,
    sparse: &'a BTreeMap<u32, f64>,
}

/// Whether the query image has a dominant object after standard NMS.
pub fn query_dominance(join: &PinJoin) -> bool {
    dominant_object(&nms(&join.detections, DEFAULT_NMS_IOU)).dominant
}

/// Assembles feature vectors for query/candidate pairs from one PinJoinSet.
pub struct Featurizer<'a> {
    pinjoins: &'a PinJoinSet,
    mode: Mode,
    schema: FeatureSchema,
    pop_log_max: f64,
}

impl<'a> Featurizer<'a> {
    pub fn new(pinjoins: &'a PinJoinSet, mode: Mode) -> Self {
        if mode.uses_crop_embeddings() && !pinjoins.iter().any(|j| j.has_crop()) {
            log::warn!(
                "mode {mode} expects object-crop embeddings but none are present; \
                 falling back to whole-image embeddings"
            );
        }
        Featurizer {
            pinjoins,
            mode,
            schema: FeatureSchema::for_mode(mode),
            pop_log_max: (1.0 + pinjoins.max_popularity as f64).ln(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// Resolves the query side once; reuse it for every candidate of the
    /// same query. Errors when the image is not in the corpus.
    pub fn query_context(&self, query: &ImageSig) -> Result<QueryContext<'a>> {
        let join = self
            .pinjoins
            .get(query)
            .ok_or_else(|| Error::UnknownImage(query.clone()))?;
        let dominant = query_dominance(join);
        let use_crop = self.mode.uses_crop_embeddings() && dominant && join.has_crop();
        let (code, sparse) = if use_crop {
            (join.crop_binary_code.as_ref(), &join.crop_sparse_vec)
        } else {
            (join.binary_code.as_ref(), &join.sparse_vec)
        };
        Ok(QueryContext {
            join,
            dominant,
            code,
            sparse,
        })
    }

    /// Feature vector for one candidate under a prepared query context.
    pub fn features_with(&self, ctx: &QueryContext, candidate: &ImageSig) -> Result<FeatureVector> {
        let cand = self
            .pinjoins
            .get(candidate)
            .ok_or_else(|| Error::UnknownImage(candidate.clone()))?;
        self.assemble(ctx, cand)
    }

    /// Feature vector for one (query, candidate) pair.
    pub fn features(&self, query: &ImageSig, candidate: &ImageSig) -> Result<FeatureVector> {
        let ctx = self.query_context(query)?;
        self.features_with(&ctx, candidate)
    }

    fn assemble(&self, ctx: &QueryContext, cand: &PinJoin) -> Result<FeatureVector> {
        let q = ctx.join;
        let mut values = Vec::with_capacity(self.schema.n_features());

        values.push(annotation_similarity(&q.annotations, &cand.annotations));
        values.push(clamp01(dense_cosine(&q.topic_vec, &cand.topic_vec)));
        values.push(clamp01(cosine_similarity(
            &cat_map(&q.category_vec),
            &cat_map(&cand.category_vec),
        )));
        values.push(cand.quality);
        values.push(if self.pop_log_max > 0.0 {
            (1.0 + cand.popularity as f64).ln() / self.pop_log_max
        } else {
            0.0
        });

        if self.mode == Mode::Control {
            return Ok(FeatureVector { values });
        }

        let fc6 = match (ctx.code, &cand.binary_code) {
            (Some(qc), Some(cc)) => clamp01(hamming_similarity(qc, cc)?),
            _ => 0.0,
        };
        let fc8 = if ctx.code.is_some() && cand.has_visual() {
            clamp01(cosine_similarity(ctx.sparse, &cand.sparse_vec))
        } else {
            0.0
        };
        let boost = if self.mode.gate_boost() && ctx.dominant {
            GATE_BOOST
        } else {
            1.0
        };
        values.push(fc6 * boost);
        values.push(fc8 * boost);
        values.push(if ctx.code.is_some() { 1.0 } else { 0.0 });
        values.push(if cand.has_visual() { 1.0 } else { 0.0 });

        if self.mode == Mode::VisualCross {
            // cross features always use the ungated whole-image similarity
            for c in 0..NUM_CATEGORIES as u8 {
                let weight = q.category_vec.get(&c).copied().unwrap_or(0.0);
                values.push(weight * fc6);
            }
        }

        debug_assert_eq!(values.len(), self.schema.n_features());
        Ok(FeatureVector { values })
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn cat_map(categories: &BTreeMap<u8, f64>) -> BTreeMap<u32, f64> {
    categories.iter().map(|(&c, &v)| (c as u32, v)).collect()
}
