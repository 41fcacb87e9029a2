//! Continual learning from interaction: split held-out episodes, collect
//! oracle-corrected trajectories with their real instructions, fine-tune on
//! them, and compare against sampled shortest paths described by the
//! template speaker.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_jsonl, write_jsonl, WorldSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalPlan};
use crate::interact::{run_agent, AgentKind, RunOptions};
use crate::lang::{InstructionSource, LangConfig, Vocabulary};
use crate::oracle::OracleConfig;
use crate::policy::ModelParams;
use crate::seed;
use crate::trainer::{TrainConfig, Trainer};
use crate::world::{sample_episode, Episode};

/// Teaching-to-evaluation proportion of the held-out set (1500 : 849).
pub const TEACH_FRACTION: (usize, usize) = (1500, 2349);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// No trajectory appears in both halves.
    Disjoint,
    /// Episodes are shuffled and cut, so trajectories may be shared.
    Random,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disjoint" => Ok(Self::Disjoint),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown split mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub t_a: Vec<Episode>,
    pub t_b: Vec<Episode>,
    pub mode: SplitMode,
}

/// Size of the teaching half for `n` episodes.
pub fn teach_size(n: usize) -> usize {
    let (a, total) = TEACH_FRACTION;
    ((n * a) as f64 / total as f64).round() as usize
}

pub fn split(episodes: &[Episode], mode: SplitMode, seed: u64) -> Result<DatasetSplit> {
    let n_a = teach_size(episodes.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SplitMode::Random => {
            let mut all = episodes.to_vec();
            all.shuffle(&mut rng);
            let t_b = all.split_off(n_a);
            Ok(DatasetSplit {
                t_a: all,
                t_b,
                mode,
            })
        }
        SplitMode::Disjoint => {
            let mut groups: BTreeMap<(u64, Vec<usize>), Vec<Episode>> = BTreeMap::new();
            for e in episodes {
                groups
                    .entry((e.world_seed, e.gt_trajectory.clone()))
                    .or_default()
                    .push(e.clone());
            }
            if groups.len() < 2 {
                return Err(Error::Data(format!(
                    "disjoint split needs at least two distinct trajectories, found {}",
                    groups.len()
                )));
            }
            let mut groups: Vec<Vec<Episode>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            let mut out = DatasetSplit {
                t_a: Vec::new(),
                t_b: Vec::new(),
                mode,
            };
            for g in groups {
                if out.t_a.len() < n_a {
                    out.t_a.extend(g);
                } else {
                    out.t_b.extend(g);
                }
            }
            if out.t_b.is_empty() {
                return Err(Error::Data("disjoint split left the evaluation half empty".into()));
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    HumanGuided,
    PreExploration,
}

/// One instruction paired with an executable viewpoint sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedItem {
    pub world_seed: u64,
    pub target: usize,
    pub token_ids: Vec<usize>,
    pub instruction_source: InstructionSource,
    /// Viewpoints visited, start first.
    pub path: Vec<usize>,
    /// Executed action indices, stop last when the run ended by stopping.
    pub actions: Vec<usize>,
    pub provenance: Provenance,
    pub truncated: bool,
    pub episode_seed: u64,
}

impl AugmentedItem {
    /// Episode whose imitation target is this item's path.
    pub fn to_episode(&self) -> Episode {
        Episode {
            world_seed: self.world_seed,
            start: self.path[0],
            target: self.target,
            gt_trajectory: self.path.clone(),
            instruction: crate::lang::Instruction {
                token_ids: self.token_ids.clone(),
                source: self.instruction_source,
            },
            episode_seed: self.episode_seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentedSet {
    pub items: Vec<AugmentedItem>,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.items)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            items: read_jsonl(path)?,
        })
    }

    /// First `n` usable (non-truncated) items.
    pub fn take_usable(&self, n: usize) -> AugmentedSet {
        AugmentedSet {
            items: self
                .items
                .iter()
                .filter(|i| !i.truncated)
                .take(n)
                .cloned()
                .collect(),
        }
    }

    /// Checks that every path walks graph edges in its world.
    pub fn validate(&self, worlds: &WorldSet) -> Result<()> {
        for it in &self.items {
            let w = worlds.get(it.world_seed)?;
            if it.path.is_empty() {
                return Err(Error::Data("augmented item with empty path".into()));
            }
            w.path_length(&it.path)?;
        }
        Ok(())
    }
}

/// Runs the interacting agent with a perfect oracle on every teaching
/// episode and keeps the executed (corrected) moves with the original
/// instruction. Ask steps are not stored as actions.
pub fn collect_interactions(
    params: &ModelParams,
    worlds: &WorldSet,
    t_a: &[Episode],
    agent: AgentKind,
    epsilon: f64,
    max_steps: usize,
) -> Result<AugmentedSet> {
    if agent == AgentKind::Asa && !params.ask_enabled() {
        return Err(Error::Config("asa collection needs an ask-enabled checkpoint".into()));
    }
    let opts = RunOptions {
        max_steps,
        free_ask: false,
        oracle: OracleConfig::perfect(),
    };
    let items = t_a
        .iter()
        .map(|e| {
            let w = worlds.get(e.world_seed)?;
            let trace = run_agent(agent, params, w, e, epsilon, &opts)?;
            Ok(AugmentedItem {
                world_seed: e.world_seed,
                target: e.target,
                token_ids: e.instruction.token_ids.clone(),
                instruction_source: e.instruction.source,
                path: trace.path.clone(),
                actions: trace.steps.iter().filter_map(|s| s.executed).collect(),
                provenance: Provenance::HumanGuided,
                truncated: trace.truncated,
                episode_seed: e.episode_seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentedSet { items })
}

/// Samples `n` shortest paths in `worlds` and describes them with the
/// template speaker.
pub fn pre_exploration_data(
    worlds: &WorldSet,
    vocab: &Vocabulary,
    speaker: &LangConfig,
    n: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Result<AugmentedSet> {
    if n == 0 {
        return Err(Error::Config("pre-exploration needs n >= 1".into()));
    }
    let list: Vec<_> = worlds.iter().collect();
    if list.is_empty() {
        return Err(Error::Data("no worlds to explore".into()));
    }
    let items = (0..n)
        .map(|i| {
            let w = list[i % list.len()];
            let es = seed::derive(seed, i as u64);
            let e = sample_episode(w, vocab, speaker, es, len_range)?;
            let mut actions = Vec::with_capacity(e.gt_trajectory.len());
            for win in e.gt_trajectory.windows(2) {
                let acts = w.navigable_actions(win[0])?;
                actions.push(acts.index_of(win[1]).expect("path edge"));
            }
            actions.push(w.navigable_actions(e.target)?.stop_index());
            Ok(AugmentedItem {
                world_seed: w.seed,
                target: e.target,
                token_ids: e.instruction.token_ids,
                instruction_source: InstructionSource::Augmented,
                path: e.gt_trajectory,
                actions,
                provenance: Provenance::PreExploration,
                truncated: false,
                episode_seed: es,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentedSet { items })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Teacher-forced cross-entropy on the stored paths only.
    Supervised,
    /// Adds the rollout branch on the same episodes.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub epochs: f64,
    /// Base training settings; iterations are derived from `epochs`.
    pub train: TrainConfig,
    /// Include truncated interaction runs.
    pub keep_truncated: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            mode: FinetuneMode::Supervised,
            epochs: 3.0,
            train: TrainConfig {
                val_episodes: 0,
                ..TrainConfig::default()
            },
            keep_truncated: false,
        }
    }
}

/// Fine-tunes a copy of `params` (ask disabled) on `set` with a fresh
/// optimizer. Returns the new parameters.
pub fn finetune(
    params: &ModelParams,
    worlds: &WorldSet,
    set: &AugmentedSet,
    config: &FinetuneConfig,
) -> Result<ModelParams> {
    let items: Vec<&AugmentedItem> = set
        .items
        .iter()
        .filter(|i| config.keep_truncated || !i.truncated)
        .collect();
    if items.is_empty() {
        return Err(Error::Data("fine-tuning set is empty".into()));
    }
    let start = params.with_ask(false);
    let mut tc = config.train.clone();
    tc.iterations = (config.epochs * items.len() as f64 / tc.batch_size as f64).ceil() as usize;
    tc.val_episodes = 0;
    tc.log_interval = tc.iterations.max(1);
    if config.mode == FinetuneMode::Supervised {
        tc.rl_weight = 0.0;
        tc.il_weight = 1.0;
    }
    if tc.iterations == 0 {
        return Ok(start);
    }
    let episodes: Vec<Episode> = items.iter().map(|i| i.to_episode()).collect();
    let paths: Vec<Vec<usize>> = items.iter().map(|i| i.path.clone()).collect();
    let mut trainer = Trainer::new(tc, start, worlds, &episodes)?.with_il_paths(&paths)?;
    trainer.run(None, |_| {})?;
    assert!(
        !trainer.params.ask_enabled(),
        "fine-tuning must never enable the ask action"
    );
    Ok(trainer.params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub human_sr: f64,
    pub preexp_sr: f64,
}

pub const CURVE_HEADER: &str = "size,human_sr,preexp_sr";

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.size, p.human_sr, p.preexp_sr));
    }
    s
}

/// For every size, fine-tunes separately on the first `size` items of each
/// set and evaluates both on `t_b` without interaction.
pub fn data_efficiency_curve(
    params: &ModelParams,
    worlds: &WorldSet,
    human: &AugmentedSet,
    pre: &AugmentedSet,
    t_b: &[Episode],
    sizes: &[usize],
    config: &FinetuneConfig,
) -> Result<Vec<CurvePoint>> {
    let plan = EvalPlan::base(config.train.max_steps);
    let base_sr = evaluate(&params.with_ask(false), worlds, t_b, &plan)?.1.success_rate;
    sizes
        .iter()
        .map(|&s| {
            if s == 0 {
                return Ok(CurvePoint {
                    size: 0,
                    human_sr: base_sr,
                    preexp_sr: base_sr,
                });
            }
            let usable = human.items.iter().filter(|i| !i.truncated).count();
            if s > usable || s > pre.len() {
                return Err(Error::Config(format!(
                    "curve size {s} exceeds available items ({usable} human-guided, {} pre-exploration)",
                    pre.len()
                )));
            }
            let h = finetune(params, worlds, &human.take_usable(s), config)?;
            let p = finetune(params, worlds, &pre.take_usable(s), config)?;
            Ok(CurvePoint {
                size: s,
                human_sr: evaluate(&h, worlds, t_b, &plan)?.1.success_rate,
                preexp_sr: evaluate(&p, worlds, t_b, &plan)?.1.success_rate,
            })
        })
        .collect()
}
