//! Shared pipeline configuration file. Every field is optional; command-line
//! flags override whatever the file sets.

use std::path::{Path, PathBuf};

use anyhow::Context;
use kindred_core::candgen::GenConfig;
use kindred_core::features::Mode;
use kindred_core::synth::SynthConfig;
use kindred_core::training::Hyperparams;
use serde::Deserialize;

pub const DEFAULT_MIN_IMPRESSIONS: u64 = 10;
pub const DEFAULT_HOLDOUT_FRAC: f64 = 0.25;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_dir: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub recommendations: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub top_n: Option<usize>,
    pub min_impressions: Option<u64>,
    pub holdout_frac: Option<f64>,
    pub candgen: GenConfig,
    pub hyperparams: Hyperparams,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// File config when given, defaults otherwise.
    pub fn resolve(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(PipelineConfig::default()),
        }
    }

    /// Pushes one seed into every stage that takes one.
    pub fn propagate_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.candgen.seed = seed;
        self.hyperparams.seed = seed;
        self.synth.seed = seed;
    }
}
