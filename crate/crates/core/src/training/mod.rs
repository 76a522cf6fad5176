//! Alternating generator/critic optimization.

pub mod loss;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::critic::CriticConfig;
use crate::error::{Error, Result};
use crate::forecaster::ForecasterConfig;
use crate::geometry::{ProjectOptions, ProjectionMode, DEFAULT_Z_MIN};

pub use loss::{cross_entropy, cross_entropy_on_tape, generator_loss_on_tape, LossBreakdown, LossTargets, LossWeights};
pub use trainer::{
    load_critic, load_generator, Batch, DatasetInfo, EpochReport, StepLog, TrainData, TrainReport, Trainer,
    ValidationMetrics,
};

/// Stream ids fed to the seeded generator; one per source of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RngStreams {
    pub generator_init: u64,
    pub critic_init: u64,
    pub shuffle: u64,
    pub noise: u64,
    pub critic_batch: u64,
}

impl Default for RngStreams {
    fn default() -> Self {
        Self {
            generator_init: 11,
            critic_init: 12,
            shuffle: 13,
            noise: 14,
            critic_batch: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub forecaster: ForecasterConfig,
    pub critic: CriticConfig,
    pub weights: LossWeights,
    /// Samples per optimizer step.
    pub batch_size: usize,
    /// Rows per forward pass; gradients of the micro-batches making up one
    /// batch are accumulated. Zero means `batch_size`.
    pub micro_batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub critic_lr: f32,
    pub critic_weight_decay: f32,
    pub epochs: usize,
    pub seed: u64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Periodic checkpoint interval in epochs; 0 disables.
    pub checkpoint_every: usize,
    pub projection: ProjectionMode,
    pub z_min: f64,
    /// Rollout horizon `M` used by evaluation.
    pub rollout_steps: usize,
    pub streams: RngStreams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            forecaster: ForecasterConfig::default(),
            critic: CriticConfig::default(),
            weights: LossWeights::default(),
            batch_size: 256,
            micro_batch_size: 0,
            lr: 1e-4,
            weight_decay: 1e-3,
            critic_lr: 1e-4,
            critic_weight_decay: 0.0,
            epochs: 100,
            seed: 0,
            n_critic: 1,
            patience: 20,
            checkpoint_every: 10,
            projection: ProjectionMode::Perspective,
            z_min: DEFAULT_Z_MIN,
            rollout_steps: 5,
            streams: RngStreams::default(),
        }
    }
}

pub const PRESETS: [&str; 3] = ["default", "cooking", "assembly"];

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        match name {
            "default" => Ok(base),
            "cooking" | "assembly" => Ok(Self {
                weights: LossWeights {
                    action: 1e6,
                    pose2d: 1.0,
                    adv3d: 1.0,
                },
                batch_size: 4096,
                micro_batch_size: 256,
                lr: 1e-4,
                weight_decay: 1e-3,
                rollout_steps: if name == "cooking" { 10 } else { 5 },
                ..base
            }),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forecaster.validate()?;
        self.critic.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.micro_batch_size > self.batch_size {
            return Err(Error::Config("micro_batch_size exceeds batch_size".into()));
        }
        for (name, v) in [("lr", self.lr), ("critic_lr", self.critic_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.weight_decay < 0.0 || self.critic_weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.weights.adv3d > 0.0 && self.n_critic == 0 {
            return Err(Error::Config("adversarial loss needs n_critic >= 1".into()));
        }
        if self.forecaster.num_joints != self.critic.num_joints {
            return Err(Error::Config("forecaster and critic disagree on joint count".into()));
        }
        if self.rollout_steps == 0 {
            return Err(Error::Config("rollout_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn micro_batch(&self) -> usize {
        if self.micro_batch_size == 0 {
            self.batch_size
        } else {
            self.micro_batch_size
        }
    }

    /// Options for the differentiable projection used by the loss.
    pub fn train_projection(&self) -> ProjectOptions {
        ProjectOptions {
            mode: self.projection,
            z_min: self.z_min,
            soft_depth: true,
        }
    }

    /// Options for projections whose failure must be reported.
    pub fn eval_projection(&self) -> ProjectOptions {
        ProjectOptions {
            soft_depth: false,
            ..self.train_projection()
        }
    }

    /// Applies a `key=value` override addressed by dotted path, e.g.
    /// `weights.adv3d=0` or `forecaster.hidden_dim=128`.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        crate::overrides::apply_override(self, assignment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_presets() {
        let c = TrainConfig::preset("cooking").unwrap();
        assert_eq!(c.rollout_steps, 10);
        assert_eq!(c.weights.action, 1e6);
        assert_eq!(c.batch_size, 4096);
        assert_eq!(TrainConfig::preset("assembly").unwrap().rollout_steps, 5);
        assert!(TrainConfig::preset("nope").is_err());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut c = TrainConfig::default();
        c.set("weights.adv3d=0").unwrap();
        c.set("forecaster.hidden_dim=64").unwrap();
        c.set("projection=affine").unwrap();
        c.set("critic.lipschitz={\"kind\":\"clip\",\"value\":0.01}").unwrap();
        assert_eq!(c.weights.adv3d, 0.0);
        assert_eq!(c.forecaster.hidden_dim, 64);
        assert_eq!(c.projection, ProjectionMode::Affine);
        assert!(matches!(c.critic.lipschitz, crate::critic::Lipschitz::Clip(_)));
        assert!(c.set("weights.nothing=1").is_err());
        assert!(c.set("batch_size").is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let c = TrainConfig::preset("cooking").unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), c);
        assert_eq!(serde_json::from_str::<TrainConfig>("{}").unwrap(), TrainConfig::default());
    }
}
