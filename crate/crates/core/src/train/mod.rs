//! Training loops, evaluation metrics and checkpoints.

mod checkpoint;
mod eval;
mod metrics;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelConfig;

pub use checkpoint::{config_digest, Checkpoint, OptimizerState, CHECKPOINT_SCHEMA_VERSION};
pub use eval::{evaluate_imputation, reconstruction_mse, Imputer, ImputationReport};
pub use metrics::{auc, write_metrics_csv, MetricsRow, METRICS_HEADER};
pub use trainer::{train, EpochLosses, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pvae,
    Pbigan,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Pvae => "pvae",
            ModelKind::Pbigan => "pbigan",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pvae" => Ok(ModelKind::Pvae),
            "pbigan" => Ok(ModelKind::Pbigan),
            other => Err(Error::invalid(format!("model must be pvae or pbigan, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam learning rate of the encoder, decoder and classifier.
    pub lr: f64,
    pub disc_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Importance samples per case.
    pub k: usize,
    /// Weight of the autoencoding term of the adversarial objective.
    pub lambda: f64,
    pub classifier_weight: f64,
    /// Discriminator updates per encoder/decoder update.
    pub disc_steps: usize,
    pub seed: u64,
    /// Evaluate every this many epochs (the last epoch is always evaluated).
    pub eval_every: usize,
    pub holdout: f64,
    /// Fill the `seconds` metrics column with wall-clock time.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model_kind: ModelKind::Pvae,
            model: ModelConfig::default(),
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            disc_lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            k: 8,
            lambda: 1.0,
            classifier_weight: 1.0,
            disc_steps: 1,
            seed: 0,
            eval_every: 1,
            holdout: 0.3,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.k == 0 || self.eval_every == 0 || self.disc_steps == 0 {
            return Err(Error::invalid("batch_size, k, eval_every and disc_steps must be positive"));
        }
        if !(self.lr > 0.0 && self.disc_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.lambda >= 0.0) || !(self.classifier_weight >= 0.0) {
            return Err(Error::invalid("λ and classifier_weight must be non-negative"));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::invalid(format!("holdout must lie in (0, 1), got {}", self.holdout)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
