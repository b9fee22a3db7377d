use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::graph::SplitRatios;
use crate::model::ModelConfig;

pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_SEED_COUNT: u64 = 10;

/// Loss magnitude beyond which a run is treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: AdamConfig,
    /// One independent run per seed. Each seed drives parameter init and dropout.
    pub seeds: Vec<u64>,
    /// Seed for the stratified split, used when the bundle carries no split of its own.
    pub split_seed: u64,
    pub split: SplitRatios,
    /// Stride (in epochs) for recording per-layer smoothness and checking
    /// codebank invariants. 0 disables periodic recording.
    pub record_smoothness_every: usize,
    /// Kept out of the serialized form: config documents carry the model as a
    /// sibling `model` section.
    #[serde(skip)]
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            optimizer: AdamConfig::default(),
            seeds: (0..DEFAULT_SEED_COUNT).collect(),
            split_seed: 0,
            split: SplitRatios::default(),
            record_smoothness_every: 50,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("train.seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("train.seeds", "seeds must be distinct"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config("train.optimizer.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&o.beta1) {
            return Err(Error::config("train.optimizer.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("train.optimizer.beta2", "must lie in [0, 1)"));
        }
        if !(o.eps > 0.0) {
            return Err(Error::config("train.optimizer.eps", "must be positive"));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::config("train.optimizer.weight_decay", "must be non-negative"));
        }
        self.model.validate()
    }
}
