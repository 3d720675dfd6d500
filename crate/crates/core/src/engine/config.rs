use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fewshot::DEFAULT_TEMPERATURE;
use crate::proposals::{ProposalConfig, SampleConfig};

mod defaults {
    use super::*;

    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn iterations() -> usize {
        2000
    }
    pub fn lambda() -> f64 {
        0.5
    }
    pub fn n_way() -> usize {
        5
    }
    pub fn shots() -> usize {
        1
    }
    pub fn stage1() -> SampleConfig {
        SampleConfig::stage1()
    }
    pub fn stage2() -> SampleConfig {
        SampleConfig::stage2()
    }
    pub fn nms_threshold() -> f64 {
        0.7
    }
    pub fn train_top_k() -> usize {
        32
    }
    pub fn test_top_k() -> usize {
        64
    }
    pub fn temperature() -> f64 {
        DEFAULT_TEMPERATURE
    }
    pub fn grad_clip() -> Option<f64> {
        Some(1.0)
    }
    pub fn count() -> usize {
        1000
    }
    pub fn proposal_threshold() -> f64 {
        0.3
    }
    pub fn yes() -> bool {
        true
    }
    pub fn leak_gain() -> f64 {
        2.0
    }
}

/// Frozen auxiliary projection that amplifies directions seen in pretraining.
///
/// Every feature row `x` becomes `x + gain · P x`, with `P` the orthogonal projection onto
/// the span of the pretraining references of visible classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakageConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "defaults::leak_gain")]
    pub gain: f64,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            gain: defaults::leak_gain(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    /// Weight of the adaptation loss.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::n_way")]
    pub n_way: usize,
    #[serde(default = "defaults::shots")]
    pub shots: usize,
    #[serde(default = "defaults::stage1")]
    pub stage1: SampleConfig,
    #[serde(default = "defaults::stage2")]
    pub stage2: SampleConfig,
    #[serde(default = "defaults::nms_threshold")]
    pub nms_threshold: f64,
    /// Stage-1 survivors handed to stage 2 per training step.
    #[serde(default = "defaults::train_top_k")]
    pub top_k: usize,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    /// Joint gradient norm is clipped to this value before each step; `null` disables.
    #[serde(default = "defaults::grad_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub model: ProposalConfig,
    #[serde(default)]
    pub leakage: LeakageConfig,
    /// Seeds initialisation and the training episode stream.
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            iterations: defaults::iterations(),
            lambda: defaults::lambda(),
            n_way: defaults::n_way(),
            shots: defaults::shots(),
            stage1: defaults::stage1(),
            stage2: defaults::stage2(),
            nms_threshold: defaults::nms_threshold(),
            top_k: defaults::train_top_k(),
            temperature: defaults::temperature(),
            grad_clip: defaults::grad_clip(),
            model: ProposalConfig::default(),
            leakage: LeakageConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and non-negative"));
        }
        if !(self.nms_threshold > 0.0 && self.nms_threshold <= 1.0) {
            return Err(Error::config("nms_threshold", "must lie in (0, 1]"));
        }
        if self.n_way == 0 || self.shots == 0 {
            return Err(Error::config(
                "n_way",
                "episodes need at least one class and one shot",
            ));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be positive"));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::config("temperature", "must be positive"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::config("grad_clip", "must be positive"));
        }
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        self.model.validate()
    }
}

/// Test-time protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of test episodes averaged.
    #[serde(default = "defaults::count")]
    pub count: usize,
    /// Master seed of the test episode stream.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::n_way")]
    pub n_way: usize,
    #[serde(default = "defaults::shots")]
    pub shots: usize,
    #[serde(default = "defaults::proposal_threshold")]
    pub proposal_threshold: f64,
    #[serde(default)]
    pub similarity_threshold: f64,
    #[serde(default = "defaults::nms_threshold")]
    pub nms_threshold: f64,
    /// Stage-1 survivors handed to stage 2 at inference.
    #[serde(default = "defaults::test_top_k")]
    pub top_k: usize,
    /// NMS among same-label detections after assignment.
    #[serde(default = "defaults::yes")]
    pub per_class_nms: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            count: defaults::count(),
            seed: 0,
            n_way: defaults::n_way(),
            shots: defaults::shots(),
            proposal_threshold: defaults::proposal_threshold(),
            similarity_threshold: 0.0,
            nms_threshold: defaults::nms_threshold(),
            top_k: defaults::test_top_k(),
            per_class_nms: true,
        }
    }
}

impl EvalConfig {
    /// Low-threshold preset (proposal 0.05, similarity 0.02).
    pub fn low_threshold_preset() -> Self {
        Self {
            proposal_threshold: 0.05,
            similarity_threshold: 0.02,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("count", "must be at least 1"));
        }
        if self.n_way == 0 || self.shots == 0 {
            return Err(Error::config(
                "n_way",
                "episodes need at least one class and one shot",
            ));
        }
        if !(0.0..=1.0).contains(&self.proposal_threshold) {
            return Err(Error::config("proposal_threshold", "must lie in [0, 1]"));
        }
        if !(-1.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::config("similarity_threshold", "must lie in [-1, 1]"));
        }
        if !(self.nms_threshold > 0.0 && self.nms_threshold <= 1.0) {
            return Err(Error::config("nms_threshold", "must lie in (0, 1]"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be positive"));
        }
        Ok(())
    }
}
