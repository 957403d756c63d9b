//! Experiment configuration. Every field has a default, unknown keys are
//! rejected, and the whole struct is embedded in each result file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use sami_core::encoder::{SimilarityConfig, DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN_DIM};
use sami_core::envs::{Physics, SplitName, TaskSplit};
use sami_core::estimators::DistanceMode;
use sami_core::replay::ReplayConfig;
use sami_core::rl::SacConfig;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tesac,
    Ccm,
    Satesac,
    Saccm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tesac, Variant::Ccm, Variant::Satesac, Variant::Saccm];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Tesac => "tesac",
            Variant::Ccm => "ccm",
            Variant::Satesac => "satesac",
            Variant::Saccm => "saccm",
        }
    }

    pub fn spec(self) -> VariantSpec {
        let contrastive = match self {
            Variant::Tesac => ContrastiveMode::None,
            Variant::Ccm => ContrastiveMode::InfonceCrossTask,
            Variant::Satesac => ContrastiveMode::SanceIntraTask,
            Variant::Saccm => ContrastiveMode::SancePlusInfonce,
        };
        VariantSpec { contrastive }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    None,
    InfonceCrossTask,
    SanceIntraTask,
    SancePlusInfonce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub contrastive: ContrastiveMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Splits {
    pub train: TaskSplit,
    pub moderate: TaskSplit,
    pub extreme: TaskSplit,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: TaskSplit::train(),
            moderate: TaskSplit::moderate(),
            extreme: TaskSplit::extreme(),
        }
    }
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &TaskSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Moderate => &self.moderate,
            SplitName::Extreme => &self.extreme,
        }
    }

    /// Every split with `count` crippled actuators.
    pub fn with_crippled(mut self, count: usize) -> Self {
        for s in [&mut self.train, &mut self.moderate, &mut self.extreme] {
            s.crippled_count = count;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub momentum_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: DEFAULT_HIDDEN_DIM,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            learning_rate: 1e-3,
            momentum_rate: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    /// Number of keys `K` (one positive plus `K − 1` negatives).
    pub batch_size: usize,
    /// Coefficient of the contrastive term in the encoder loss.
    pub alpha: f64,
    pub similarity: SimilarityConfig,
    pub distance: DistanceMode,
    pub detach_multiplier: bool,
    /// Tasks drawn per gradient step; `None` uses every eligible task.
    pub tasks_per_step: Option<usize>,
    /// One backward pass through `L_RL + α·L_contrastive`; otherwise two
    /// sequential encoder updates.
    pub combined_backward: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            alpha: 1.0,
            similarity: SimilarityConfig::default(),
            distance: DistanceMode::default(),
            detach_multiplier: false,
            tasks_per_step: None,
            combined_backward: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub total_timesteps: u64,
    pub batch_size: usize,
    /// Environment steps between training rounds.
    pub train_every: u64,
    pub gradient_steps: usize,
    /// Uniform random actions before the first round.
    pub learning_starts: u64,
    /// Transitions taken from each sampled trajectory in an RL batch.
    pub transitions_per_trajectory: usize,
    pub probe_every: u64,
    pub probe_episodes: usize,
    pub eval_episodes_per_task: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 200_000,
            batch_size: 256,
            train_every: 128,
            gradient_steps: 16,
            learning_starts: 1_000,
            transitions_per_trajectory: 1,
            probe_every: 10_000,
            probe_episodes: 10,
            eval_episodes_per_task: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub physics: Physics,
    pub splits: Splits,
    pub replay: ReplayConfig,
    pub encoder: EncoderConfig,
    pub contrastive: ContrastiveConfig,
    pub sac: SacConfig,
    pub training: TrainingConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Satesac,
            physics: Physics::default(),
            splits: Splits::default(),
            replay: ReplayConfig::default(),
            encoder: EncoderConfig::default(),
            contrastive: ContrastiveConfig::default(),
            sac: SacConfig::default(),
            training: TrainingConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.replay.validate()?;
        self.sac.validate()?;
        self.contrastive.similarity.validate()?;
        for name in SplitName::ALL {
            let split = self.splits.get(name);
            if split.name != name {
                return Err(invalid(format!("split `{name}` is labelled `{}`", split.name)));
            }
            split.validate()?;
        }
        let p = &self.physics;
        if !(p.gravity > 0.0 && p.max_force > 0.0 && p.dt > 0.0 && p.episode_len > 0 && p.goal_min <= p.goal_max) {
            return Err(invalid("physics constants out of range"));
        }
        let e = &self.encoder;
        if e.hidden_dim == 0 || e.embedding_dim == 0 || e.learning_rate.is_nan() || e.learning_rate <= 0.0 {
            return Err(invalid("encoder sizes and learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&e.momentum_rate) {
            return Err(invalid(format!("momentum rate {} outside [0, 1]", e.momentum_rate)));
        }
        let c = &self.contrastive;
        if c.batch_size < 2 {
            return Err(invalid(format!("contrastive batch size {} below 2", c.batch_size)));
        }
        if !(c.alpha >= 0.0 && c.alpha.is_finite()) {
            return Err(invalid(format!(
                "contrastive coefficient {} must be finite and non-negative",
                c.alpha
            )));
        }
        if c.tasks_per_step == Some(0) {
            return Err(invalid("contrastive tasks_per_step must be positive"));
        }
        let t = &self.training;
        if t.batch_size == 0 || t.train_every == 0 || t.transitions_per_trajectory == 0 {
            return Err(invalid(
                "training batch size, cadence and transitions per trajectory must be positive",
            ));
        }
        if t.probe_every == 0 || t.eval_episodes_per_task == 0 {
            return Err(invalid("probe cadence and evaluation episodes must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("no seeds"));
        }
        Ok(())
    }

    /// The contrastive term is evaluated only when the variant has one and
    /// its coefficient is non-zero.
    pub fn contrastive_active(&self) -> bool {
        self.variant.spec().contrastive != ContrastiveMode::None && self.contrastive.alpha != 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.replay.capacity, 100_000);
        assert_eq!(cfg.contrastive.batch_size, 12);
        assert_eq!(cfg.contrastive.alpha, 1.0);
        assert_eq!(cfg.training.total_timesteps, 200_000);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"variant": "tesac", "bogus": 1}"#);
        assert!(err.is_err());
        let nested = serde_json::from_str::<ExperimentConfig>(r#"{"training": {"batch": 3}}"#);
        assert!(nested.is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"variant": "ccm", "contrastive": {"alpha": 0.5}}"#).unwrap();
        assert_eq!(cfg.variant, Variant::Ccm);
        assert_eq!(cfg.contrastive.alpha, 0.5);
        assert_eq!(cfg.contrastive.batch_size, 12);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.contrastive.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.splits.moderate.name = SplitName::Extreme;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variants_map_to_one_mode_each() {
        let modes: Vec<_> = Variant::ALL.iter().map(|v| v.spec().contrastive).collect();
        assert_eq!(
            modes,
            vec![
                ContrastiveMode::None,
                ContrastiveMode::InfonceCrossTask,
                ContrastiveMode::SanceIntraTask,
                ContrastiveMode::SancePlusInfonce
            ]
        );
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }
}
