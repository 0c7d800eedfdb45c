//! Run configuration: one JSON document with a section per stage.
//!
//! Every field has a default, so `{}` is a valid config. Unknown keys are
//! rejected at every level. Command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::select::{EndpointConfig, PerplexityScope};
use crate::trainer::{AblationConfig, AblationStrategy, TrainConfig, DEFAULT_ROLLOUT_EPSILON};
use crate::value::ValueConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Maximum fraction of steps a capped selector may pick.
    pub ratio: f64,
    pub seed: u64,
    /// Characters kept per observation in selector prompts.
    pub observation_limit: usize,
    pub perplexity_scope: PerplexityScope,
    /// Concurrent selector requests.
    pub max_in_flight: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            ratio: 0.3,
            seed: 0,
            observation_limit: 2000,
            perplexity_scope: PerplexityScope::Joint,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub family_seed: u64,
    pub held_in: usize,
    pub held_out: usize,
    /// Deviation probability of the maze rollout policy.
    pub rollout_epsilon: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { family_seed: 0, held_in: 40, held_out: 20, rollout_epsilon: DEFAULT_ROLLOUT_EPSILON }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub strategies: Vec<AblationStrategy>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        let d = AblationConfig::default();
        AblationSection { strategies: d.strategies, ratios: d.ratios, seeds: d.seeds }
    }
}

/// Optional default locations; flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub cache_dir: Option<PathBuf>,
    /// Output directory of `gen-toy`.
    pub toy_dir: Option<PathBuf>,
    /// Masked samples used by `train-toy`.
    pub masked: Option<PathBuf>,
    /// Policy file read by `eval-toy`.
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub selection: SelectionConfig,
    pub value: ValueConfig,
    pub endpoint: EndpointConfig,
    pub train: TrainConfig,
    pub toy: ToyConfig,
    pub ablation: AblationSection,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            selection: SelectionConfig::default(),
            value: ValueConfig::default(),
            endpoint: EndpointConfig::default(),
            train: TrainConfig::default(),
            toy: ToyConfig::default(),
            ablation: AblationSection::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        jsonl::read_json(path).map_err(|e| match e {
            Error::Parse { path, line, reason } => Error::Configuration(format!("{}:{line}: {reason}", path.display())),
            other => other,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            family_seed: self.toy.family_seed,
            held_in: self.toy.held_in,
            held_out: self.toy.held_out,
            strategies: self.ablation.strategies.clone(),
            ratios: self.ablation.ratios.clone(),
            seeds: self.ablation.seeds.clone(),
            value: self.value,
            rollout_epsilon: self.toy.rollout_epsilon,
            train: self.train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::trajectory::selection_cap(self.selection.ratio, 1)?;
        if self.selection.max_in_flight == 0 {
            return Err(Error::Configuration("selection.max_in_flight must be >= 1".into()));
        }
        self.value.validate()?;
        self.endpoint.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.toy.rollout_epsilon) {
            return Err(Error::Configuration(format!(
                "toy.rollout_epsilon {} outside [0, 1]",
                self.toy.rollout_epsilon
            )));
        }
        Ok(())
    }
}
