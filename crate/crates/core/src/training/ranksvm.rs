//! Linear RankSVM over standardized feature differences.
//!
//! Minimizes (1/2)||w||^2 + C * sum_i hinge(1 - w . (z+ - z-)) where z are
//! per-feature standardized vectors, equivalently lambda/2 ||w||^2 + mean
//! hinge with lambda = 1/(C n). The stochastic trainer runs seeded
//! single-threaded subgradient descent; the full-batch variant backtracks
//! on the step size so its objective never increases across epochs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ImageSig;
use crate::features::{FeatureSchema, FeatureVector, Featurizer};
use crate::training::Triplet;
use crate::{Error, Result};

/// Anything that can produce feature vectors for (query, candidate) pairs
/// under a fixed schema.
pub trait FeatureSource {
    fn schema(&self) -> FeatureSchema;
    fn features(&self, query: &ImageSig, candidate: &ImageSig) -> Result<FeatureVector>;
}

impl FeatureSource for Featurizer<'_> {
    fn schema(&self) -> FeatureSchema {
        Featurizer::schema(self).clone()
    }

    fn features(&self, query: &ImageSig, candidate: &ImageSig) -> Result<FeatureVector> {
        Featurizer::features(self, query, candidate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Regularization strength C; larger fits the data harder.
    pub c: f64,
    pub epochs: u32,
    /// Initial learning rate, decayed as eta0 / (1 + lambda t).
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            c: 12.0,
            epochs: 200,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

impl Hyperparams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.learning_rate > 0.0) || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "hyperparams require c > 0, learning_rate > 0, epochs >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-feature standardization constants captured at train time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerEntry {
    pub mean: f64,
    pub std: f64,
}

/// A trained linear ranking model. Weights apply to standardized features;
/// the scaler travels with the model so scoring is self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    /// Ordered feature names; the unit of compatibility between models and
    /// feature sources.
    pub schema: Vec<String>,
    pub mode: crate::features::Mode,
    pub weights: Vec<f64>,
    pub scaler: Vec<ScalerEntry>,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

impl RankModel {
    /// Dot product of the weights with the standardized feature values.
    pub fn score(&self, features: &FeatureVector) -> Result<f64> {
        if features.values.len() != self.weights.len() {
            return Err(Error::SchemaMismatch {
                model: format!("{} with {} features", self.mode, self.weights.len()),
                vector: format!("{} features", features.values.len()),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&features.values)
            .zip(&self.scaler)
            .map(|((w, v), s)| w * (v - s.mean) / s.std)
            .sum())
    }

    /// Errors unless the source produces exactly this model's feature list.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if schema.names != self.schema {
            return Err(Error::SchemaMismatch {
                model: format!("{} with {} features", self.mode, self.weights.len()),
                vector: format!("{} with {} features", schema.mode, schema.names.len()),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)
            .map_err(|e| Error::record(path, 0, e.to_string()))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RankModel> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::record(path, 0, e.to_string()))
    }
}

struct Prepared {
    schema: FeatureSchema,
    scaler: Vec<ScalerEntry>,
    /// Standardized difference vectors z(positive) - z(negative).
    diffs: Vec<Vec<f64>>,
}

fn prepare<S: FeatureSource + ?Sized>(triplets: &[Triplet], source: &S) -> Result<Prepared> {
    if triplets.is_empty() {
        return Err(Error::NoTriplets);
    }
    let schema = source.schema();
    let d = schema.names.len();

    let mut raw: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(triplets.len());
    for t in triplets {
        let pos = source.features(&t.query, &t.positive)?.values;
        let neg = source.features(&t.query, &t.negative)?.values;
        for (candidate, values) in [(&t.positive, &pos), (&t.negative, &neg)] {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature {
                    query: t.query.clone(),
                    candidate: candidate.clone(),
                    feature: schema.names[i].clone(),
                });
            }
        }
        raw.push((pos, neg));
    }

    let n_vectors = (2 * raw.len()) as f64;
    let mut scaler = Vec::with_capacity(d);
    for i in 0..d {
        let sum: f64 = raw.iter().map(|(p, n)| p[i] + n[i]).sum();
        let mean = sum / n_vectors;
        let var: f64 = raw
            .iter()
            .map(|(p, n)| (p[i] - mean).powi(2) + (n[i] - mean).powi(2))
            .sum::<f64>()
            / n_vectors;
        let mut std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            std = 1.0;
        }
        scaler.push(ScalerEntry { mean, std });
    }

    let diffs = raw
        .into_iter()
        .map(|(pos, neg)| {
            (0..d)
                .map(|i| (pos[i] - scaler[i].mean) / scaler[i].std - (neg[i] - scaler[i].mean) / scaler[i].std)
                .collect()
        })
        .collect();

    Ok(Prepared {
        schema,
        scaler,
        diffs,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the weight vector by seeded stochastic subgradient descent.
/// Single-threaded; identical (triplets, features, hyperparams) give
/// identical weights.
pub fn train<S: FeatureSource + ?Sized>(
    triplets: &[Triplet],
    source: &S,
    hyperparams: &Hyperparams,
) -> Result<RankModel> {
    hyperparams.validate()?;
    let prepared = prepare(triplets, source)?;
    let n = prepared.diffs.len();
    let d = prepared.schema.names.len();
    let lambda = 1.0 / (hyperparams.c * n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(hyperparams.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut weights = vec![0.0; d];
    let mut t = 0u64;
    for _ in 0..hyperparams.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            t += 1;
            let x = &prepared.diffs[idx];
            let eta = hyperparams.learning_rate / (1.0 + lambda * t as f64);
            let violated = dot(&weights, x) < 1.0;
            for (w, &xi) in weights.iter_mut().zip(x) {
                *w *= 1.0 - eta * lambda;
                if violated {
                    *w += eta * xi;
                }
            }
        }
    }

    Ok(RankModel {
        schema: prepared.schema.names,
        mode: prepared.schema.mode,
        weights,
        scaler: prepared.scaler,
        hyperparams: *hyperparams,
        seed: hyperparams.seed,
    })
}

fn objective(weights: &[f64], diffs: &[Vec<f64>], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * dot(weights, weights);
    let hinge: f64 = diffs
        .iter()
        .map(|x| (1.0 - dot(weights, x)).max(0.0))
        .sum::<f64>()
        / diffs.len() as f64;
    reg + hinge
}

/// Full-batch subgradient descent with step-size backtracking: an epoch's
/// update is halved until the objective does not increase, so the returned
/// trajectory (objective value before training and after each epoch) is
/// non-increasing. Intended for optimizer verification, not speed.
pub fn train_full_batch<S: FeatureSource + ?Sized>(
    triplets: &[Triplet],
    source: &S,
    hyperparams: &Hyperparams,
) -> Result<(RankModel, Vec<f64>)> {
    hyperparams.validate()?;
    let prepared = prepare(triplets, source)?;
    let n = prepared.diffs.len();
    let d = prepared.schema.names.len();
    let lambda = 1.0 / (hyperparams.c * n as f64);

    let mut weights = vec![0.0; d];
    let mut current = objective(&weights, &prepared.diffs, lambda);
    let mut trajectory = vec![current];
    for epoch in 1..=hyperparams.epochs {
        let mut grad: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
        for x in &prepared.diffs {
            if dot(&weights, x) < 1.0 {
                for (g, &xi) in grad.iter_mut().zip(x) {
                    *g -= xi / n as f64;
                }
            }
        }
        let mut eta = hyperparams.learning_rate / (1.0 + lambda * epoch as f64);
        for _ in 0..40 {
            let proposal: Vec<f64> = weights
                .iter()
                .zip(&grad)
                .map(|(w, g)| w - eta * g)
                .collect();
            let value = objective(&proposal, &prepared.diffs, lambda);
            if value <= current {
                weights = proposal;
                current = value;
                break;
            }
            eta *= 0.5;
        }
        trajectory.push(current);
    }

    Ok((
        RankModel {
            schema: prepared.schema.names,
            mode: prepared.schema.mode,
            weights,
            scaler: prepared.scaler,
            hyperparams: *hyperparams,
            seed: hyperparams.seed,
        },
        trajectory,
    ))
}

/// Fraction of triplets whose positive outscores its negative; ties count
/// as failures. Errors on an empty triplet list or schema mismatch.
pub fn pairwise_accuracy<S: FeatureSource + ?Sized>(
    model: &RankModel,
    triplets: &[Triplet],
    source: &S,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    model.check_schema(&source.schema())?;
    let mut satisfied = 0usize;
    for t in triplets {
        let pos = model.score(&source.features(&t.query, &t.positive)?)?;
        let neg = model.score(&source.features(&t.query, &t.negative)?)?;
        if pos > neg {
            satisfied += 1;
        }
    }
    Ok(satisfied as f64 / triplets.len() as f64)
}
