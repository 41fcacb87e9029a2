//! Sectioned run configuration shared by every command-line subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{split, DatasetSplit, FinetuneConfig, FinetuneMode, SplitMode};
use crate::data::{generate_benchmark, Benchmark, DataConfig};
use crate::error::{Error, Result};
use crate::eval::EvalPlan;
use crate::experiment::{ExperimentConfig, StudyConfig};
use crate::interact::{AgentKind, RunOptions};
use crate::policy::ModelConfig;
use crate::seed;
use crate::trainer::TrainConfig;
use crate::world::Episode;

/// Which episodes `run`, `sweep` and friends evaluate on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    /// Episodes drawn in the training worlds but not trained on.
    ValSeen,
    /// Evaluation half of the held-out pool.
    Unseen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub agent: AgentKind,
    pub epsilon: f64,
    pub set: EvalSet,
    /// Evaluate only the first `limit` episodes when set.
    pub limit: Option<usize>,
    pub options: RunOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::Base,
            epsilon: 0.3,
            set: EvalSet::Unseen,
            limit: None,
            options: RunOptions::default(),
        }
    }
}

impl EvalConfig {
    pub fn plan(&self) -> EvalPlan {
        EvalPlan {
            agent: self.agent,
            epsilon: self.epsilon,
            options: self.options.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub split: SplitMode,
    pub collector_agent: AgentKind,
    pub collector_epsilon: f64,
    /// Pre-exploration set size; the teaching-half size when unset.
    pub pre_exploration: Option<usize>,
    /// Curve sizes; the usable maximum is appended.
    pub sizes: Vec<usize>,
    pub finetune: FinetuneConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            split: SplitMode::Disjoint,
            collector_agent: AgentKind::Asa,
            collector_epsilon: 0.5,
            pre_exploration: None,
            sizes: vec![0, 100, 250],
            finetune: FinetuneConfig {
                mode: FinetuneMode::Mixed,
                ..FinetuneConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// `vocab_size` and `vis_dim` are taken from the data section.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub augment: AugmentConfig,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            augment: AugmentConfig::default(),
            study: StudyConfig::default(),
        }
    }
}

/// Benchmark plus the teaching/evaluation split of its held-out pool.
pub struct Prepared {
    pub bench: Benchmark,
    pub halves: DatasetSplit,
}

impl RunConfig {
    /// Reads a JSON config; unknown keys are a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let bench = generate_benchmark(&self.data, self.seed)?;
        let halves = split(&bench.unseen_pool, self.augment.split, self.split_seed())?;
        Ok(Prepared { bench, halves })
    }

    /// Same split seed as the full study, so artifacts are comparable.
    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, 200)
    }

    /// Model shape with the data-dependent fields filled in.
    pub fn model_for(&self, prepared: &Prepared, ask: bool) -> ModelConfig {
        ModelConfig {
            vocab_size: prepared.bench.vocab.len(),
            vis_dim: self.data.world.vis_dim,
            ask_enabled: ask,
            ..self.model.clone()
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            data: self.data.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            split_mode: self.augment.split,
            finetune: self.augment.finetune.clone(),
            max_steps: self.eval.options.max_steps,
            study: self.study.clone(),
        }
    }
}

impl Prepared {
    pub fn eval_episodes<'a>(&'a self, cfg: &EvalConfig) -> &'a [Episode] {
        let all: &[Episode] = match cfg.set {
            EvalSet::ValSeen => &self.bench.val_seen,
            EvalSet::Unseen => &self.halves.t_b,
        };
        &all[..cfg.limit.unwrap_or(all.len()).min(all.len())]
    }

    pub fn eval_worlds(&self, cfg: &EvalConfig) -> &crate::data::WorldSet {
        match cfg.set {
            EvalSet::ValSeen => &self.bench.seen,
            EvalSet::Unseen => &self.bench.unseen,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3, "train": {"bogus": 1}}"#).unwrap();
        let e = RunConfig::load(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        std::fs::write(&p, r#"{"seed": 3, "eval": {"epsilon": 0.2}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.eval.epsilon, 0.2);
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = RunConfig::default();
        c.save(&p).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap(), c);
    }
}
