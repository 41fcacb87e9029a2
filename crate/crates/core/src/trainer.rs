//! Imitation plus advantage actor-critic training with terminal, distance,
//! deviation and ask rewards.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WorldSet;
use crate::diff::{read_checkpoint, write_checkpoint, Adam, OptimConfig, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalPlan, SUCCESS_RADIUS};
use crate::interact::AgentKind;
use crate::oracle::teacher_action;
use crate::policy::{action_matrix, bind, decode_step, encode_instruction, view_matrix, Bound, DecoderState, ModelConfig, ModelParams};
use crate::seed;
use crate::world::{Episode, WorldGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevMode {
    /// Distance from the new viewpoint to its nearest trajectory viewpoint.
    Next,
    /// Distance from the new viewpoint to the trajectory viewpoint nearest
    /// the old one.
    Previous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub il_weight: f64,
    pub rl_weight: f64,
    /// Weight of the squared critic error inside the RL loss.
    pub critic_weight: f64,
    /// Stop the critic loss from reaching the shared encoder/decoder.
    pub detach_critic: bool,
    pub entropy_coeff: f64,
    pub r_ask: f64,
    pub dev_enabled: bool,
    pub dev_mode: DevMode,
    pub terminal_reward: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub log_interval: usize,
    /// Validation episodes used for the learning curve (0 disables).
    pub val_episodes: usize,
    pub divergence_threshold: f64,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            il_weight: 1.0,
            rl_weight: 0.1,
            critic_weight: 0.5,
            detach_critic: true,
            entropy_coeff: 0.01,
            r_ask: 0.3,
            dev_enabled: true,
            dev_mode: DevMode::Next,
            terminal_reward: 2.0,
            max_steps: 20,
            batch_size: 8,
            iterations: 4000,
            log_interval: 100,
            val_episodes: 100,
            divergence_threshold: 1e3,
            optim: OptimConfig {
                lr: 3e-3,
                ..OptimConfig::default()
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.r_ask < 0.0 {
            return bad("r_ask must be non-negative");
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return bad("batch_size and max_steps must be positive");
        }
        if self.log_interval == 0 {
            return bad("log_interval must be positive");
        }
        Ok(())
    }
}

/// `d(v_t, v_n) - d(v_{t+1}, v_n)`.
pub fn distance_shaping(world: &WorldGraph, vt: usize, vt1: usize, target: usize) -> Result<f64> {
    Ok(world.distance(vt, target)? - world.distance(vt1, target)?)
}

fn nearest_on(world: &WorldGraph, to: usize, gt: &[usize]) -> Result<usize> {
    let mut best = (f64::INFINITY, usize::MAX);
    for &g in gt {
        let d = world.distance(g, to)?;
        if d < best.0 {
            best = (d, g);
        }
    }
    Ok(best.1)
}

/// Non-positive penalty for straying from the reference trajectory.
pub fn deviation_shaping(
    world: &WorldGraph,
    vt: usize,
    vt1: usize,
    gt: &[usize],
    mode: DevMode,
) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Data("deviation shaping needs a trajectory".into()));
    }
    let anchor = match mode {
        DevMode::Next => nearest_on(world, vt1, gt)?,
        DevMode::Previous => nearest_on(world, vt, gt)?,
    };
    Ok(-world.distance(vt1, anchor)?)
}

/// Rewards of one rollout record. An ask and the move it triggers are
/// separate records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub dis: f64,
    pub dev: f64,
    pub ask_penalty: f64,
    pub terminal: f64,
    pub g: f64,
    pub value: f64,
    pub is_ask: bool,
    /// Move executed on the oracle's answer rather than sampled.
    pub forced: bool,
}

/// Fills `g` with the discounted terminal return
/// `G_t = Σ_{k≥t} γ^{k-t} terminal_k` and returns the critic targets
/// `DEV_t + DIS_t + ask_t + G_t`.
pub fn returns_and_targets(records: &mut [RewardRecord], gamma: f64) -> Vec<f64> {
    let mut g = 0.0;
    for r in records.iter_mut().rev() {
        g = r.terminal + gamma * g;
        r.g = g;
    }
    records
        .iter()
        .map(|r| r.dev + r.dis + r.ask_penalty + r.g)
        .collect()
}

/// Per-episode (or batch-mean) loss components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub il: f64,
    pub rl: f64,
    pub critic: f64,
    pub entropy: f64,
    pub asks: f64,
    pub moves: f64,
    pub success: f64,
    /// Decoder steps scored (imitation plus rollout).
    pub steps: f64,
}

impl LossBreakdown {
    /// Loss per scored decoder step; the divergence detector watches this.
    pub fn per_step(&self) -> f64 {
        self.total / self.steps.max(1.0)
    }

    fn add(&mut self, o: &LossBreakdown) {
        self.total += o.total;
        self.il += o.il;
        self.rl += o.rl;
        self.critic += o.critic;
        self.entropy += o.entropy;
        self.asks += o.asks;
        self.moves += o.moves;
        self.success += o.success;
        self.steps += o.steps;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.il *= s;
        self.rl *= s;
        self.critic *= s;
        self.entropy *= s;
        self.asks *= s;
        self.moves *= s;
        self.success *= s;
        self.steps *= s;
    }
}

/// How the student rollout picks actions.
pub enum Picker {
    Sample(ChaCha8Rng),
    /// Replays recorded choices (gradient checks).
    Replay(Vec<usize>),
}

impl Picker {
    fn pick(&mut self, probs: &[f64], step: usize) -> Result<usize> {
        match self {
            Picker::Sample(rng) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Ok(i);
                    }
                }
                Ok(probs.len() - 1)
            }
            Picker::Replay(choices) => choices.get(step).copied().ok_or_else(|| {
                Error::Data(format!("replay ran out of recorded choices at step {step}"))
            }),
        }
    }
}

/// Which parts of the objective to build.
#[derive(Clone, Debug)]
pub struct EpisodePlan<'a> {
    pub episode: &'a Episode,
    /// Path the imitation branch is teacher-forced along (usually the
    /// ground-truth trajectory).
    pub il_path: &'a [usize],
    /// Advantages to use instead of `target - value`, one per decision.
    /// Gradient checks replay them so the stop-gradient stays fixed.
    pub frozen_advantages: Option<&'a [f64]>,
}

/// Result of building one episode's objective on a tape.
pub struct EpisodeGraph {
    pub root: Var,
    pub breakdown: LossBreakdown,
    pub records: Vec<RewardRecord>,
    pub choices: Vec<usize>,
    /// Advantage applied to each decision's log-probability.
    pub advantages: Vec<f64>,
    pub final_viewpoint: usize,
}

fn scalar_of<T: Real>(tape: &Tape<T>, v: Var) -> f64 {
    tape.scalar(v)
}

/// Builds `il_weight * IL + rl_weight * RL` for one episode.
pub fn build_episode_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &ModelConfig,
    bound: &Bound,
    world: &WorldGraph,
    plan: &EpisodePlan<'_>,
    config: &TrainConfig,
    picker: &mut Picker,
) -> Result<EpisodeGraph> {
    let episode = plan.episode;
    let enc = encode_instruction(tape, bound, model.vocab_size, &episode.instruction.token_ids)?;
    let mut terms = Vec::new();
    let mut bd = LossBreakdown::default();

    if config.il_weight > 0.0 && !plan.il_path.is_empty() {
        let mut state = DecoderState::initial(tape, bound);
        let mut ces = Vec::with_capacity(plan.il_path.len());
        for (t, &v) in plan.il_path.iter().enumerate() {
            let acts = world.navigable_actions(v)?;
            let view = view_matrix(tape, &world.view_features(v)?)?;
            let amat = action_matrix(tape, &acts, bound.ask_enabled)?;
            let out = decode_step(tape, bound, &enc, view, amat, &state)?;
            let teacher = match plan.il_path.get(t + 1) {
                Some(&next) => acts.index_of(next).ok_or_else(|| {
                    Error::Data(format!("imitation path step {v}->{next} is not an edge"))
                })?,
                None => acts.stop_index(),
            };
            // The teacher never labels ask: score moves and stop only.
            let logits = if bound.ask_enabled {
                tape.slice(out.logits, 0, acts.len())?
            } else {
                out.logits
            };
            ces.push(tape.cross_entropy(logits, teacher)?);
            state = out.state;
            state.prev_action = tape.constant(Tensor::vector(
                acts.feature(teacher).iter().map(|&x| T::of(x as f64)).collect(),
            ));
        }
        bd.steps += ces.len() as f64;
        let il = tape.add_all(&ces)?;
        bd.il = scalar_of(tape, il);
        terms.push(tape.scale(il, config.il_weight));
    }

    let mut records = Vec::new();
    let mut choices = Vec::new();
    let mut advantages = Vec::new();
    let mut current = episode.start;
    if config.rl_weight > 0.0 {
        let gt = &episode.gt_trajectory;
        let dev = |a: usize, b: usize| -> Result<f64> {
            if config.dev_enabled {
                deviation_shaping(world, a, b, gt, config.dev_mode)
            } else {
                Ok(0.0)
            }
        };
        struct Decision {
            logp: Var,
            value: Var,
            first: usize,
            last: usize,
        }
        let mut decisions: Vec<Decision> = Vec::new();
        let mut entropies = Vec::new();
        let mut state = DecoderState::initial(tape, bound);
        for step in 0..config.max_steps {
            let acts = world.navigable_actions(current)?;
            let view = view_matrix(tape, &world.view_features(current)?)?;
            let amat = action_matrix(tape, &acts, bound.ask_enabled)?;
            let out = decode_step(tape, bound, &enc, view, amat, &state)?;
            let logp_all = tape.log_softmax(out.logits)?;
            let p_all = tape.softmax(out.logits, 0)?;
            let probs: Vec<f64> = tape.value(p_all).data().iter().map(|x| x.f64()).collect();
            let plogp = tape.mul(p_all, logp_all)?;
            let neg_h = tape.sum(plogp);
            entropies.push(neg_h);

            let choice = picker.pick(&probs, step)?;
            if choice >= probs.len() {
                return Err(Error::Index {
                    op: "rollout",
                    index: choice,
                    len: probs.len(),
                });
            }
            choices.push(choice);
            let logp = tape.pick(logp_all, choice)?;
            let value = tape.sum(out.value);
            let first = records.len();
            let m = acts.len();
            let executed = if bound.ask_enabled && choice == m {
                records.push(RewardRecord {
                    dev: dev(current, current)?,
                    ask_penalty: -config.r_ask,
                    value: scalar_of(tape, value),
                    is_ask: true,
                    ..RewardRecord::default()
                });
                bd.asks += 1.0;
                teacher_action(world, current, episode.target, &acts)?
            } else {
                choice
            };
            let forced = executed != choice;
            bd.moves += 1.0;
            let done = executed == acts.stop_index();
            let next = if done { current } else { acts.moves[executed].dest };
            records.push(RewardRecord {
                dis: distance_shaping(world, current, next, episode.target)?,
                dev: dev(current, next)?,
                value: scalar_of(tape, value),
                forced,
                ..RewardRecord::default()
            });
            decisions.push(Decision {
                logp,
                value,
                first,
                last: records.len() - 1,
            });
            state = out.state;
            state.prev_action = tape.constant(Tensor::vector(
                acts.feature(executed).iter().map(|&x| T::of(x as f64)).collect(),
            ));
            current = next;
            if done {
                break;
            }
        }
        let success = world.distance(current, episode.target)? < SUCCESS_RADIUS;
        bd.success = if success { 1.0 } else { 0.0 };
        if let Some(last) = records.last_mut() {
            last.terminal = if success {
                config.terminal_reward
            } else {
                -config.terminal_reward
            };
        }
        let targets = returns_and_targets(&mut records, config.gamma);

        let mut pg = Vec::with_capacity(decisions.len());
        let mut critic = Vec::with_capacity(decisions.len());
        for (k, d) in decisions.iter().enumerate() {
            // An ask and the move it triggers are one decision: its target
            // collects both records' shaping terms and the return from the
            // first of them.
            let shaping: f64 = records[d.first..=d.last]
                .iter()
                .map(|r| r.dev + r.dis + r.ask_penalty)
                .sum();
            let target = shaping + records[d.first].g;
            debug_assert!(
                d.first != d.last || (target - targets[d.first]).abs() < 1e-12
            );
            let adv = match plan.frozen_advantages {
                Some(a) => *a.get(k).ok_or_else(|| {
                    Error::Data(format!("no frozen advantage for decision {k}"))
                })?,
                None => target - scalar_of(tape, d.value),
            };
            advantages.push(adv);
            pg.push(tape.scale(d.logp, -adv));
            let tgt = tape.constant(Tensor::scalar(T::of(target)));
            let err = tape.sub(d.value, tgt)?;
            critic.push(tape.mul(err, err)?);
        }
        bd.steps += decisions.len() as f64;
        let pg = tape.add_all(&pg)?;
        let critic = tape.add_all(&critic)?;
        let neg_ent = tape.add_all(&entropies)?;
        bd.rl = scalar_of(tape, pg);
        bd.critic = scalar_of(tape, critic);
        bd.entropy = -scalar_of(tape, neg_ent);
        let c = tape.scale(critic, config.critic_weight);
        let e = tape.scale(neg_ent, config.entropy_coeff);
        let rl = tape.add_all(&[pg, c, e])?;
        terms.push(tape.scale(rl, config.rl_weight));
    }
    let root = tape.add_all(&terms)?;
    bd.total = scalar_of(tape, root);
    Ok(EpisodeGraph {
        root,
        breakdown: bd,
        records,
        choices,
        advantages,
        final_viewpoint: current,
    })
}

/// Gradients of one episode's loss at `f32`.
pub fn episode_gradients(
    params: &ModelParams,
    world: &WorldGraph,
    plan: &EpisodePlan<'_>,
    config: &TrainConfig,
    rollout_seed: u64,
) -> Result<(ParamStore<f32>, EpisodeGraph)> {
    let mut tape = Tape::<f32>::new();
    let mut bound = bind(&mut tape, &params.config, &params.store)?;
    bound.detach_critic = config.detach_critic;
    let mut picker = Picker::Sample(ChaCha8Rng::seed_from_u64(rollout_seed));
    let graph = build_episode_loss(&mut tape, &params.config, &bound, world, plan, config, &mut picker)?;
    let per_step = graph.breakdown.per_step();
    if !per_step.is_finite() || per_step.abs() > config.divergence_threshold {
        return Err(Error::Numeric(format!(
            "episode loss {} per step diverged (threshold {}); reward tape: {}",
            per_step,
            config.divergence_threshold,
            serde_json::to_string(&graph.records).unwrap_or_default()
        )));
    }
    tape.backward(graph.root)?;
    let mut grads = ParamStore::new();
    for (name, &v) in params.store.names().iter().zip(&bound.vars) {
        grads.insert(name.clone(), tape.grad_or_zeros(v));
    }
    Ok((grads, graph))
}

/// One row of the learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iter: usize,
    pub il_loss: f64,
    pub rl_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub val_sr: f64,
    pub val_asks: f64,
}

pub const CURVE_HEADER: &str = "iter,il_loss,rl_loss,critic_loss,entropy,val_sr,val_asks";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iter, r.il_loss, r.rl_loss, r.critic_loss, r.entropy, r.val_sr, r.val_asks
        ));
    }
    s
}

/// Training state: parameters, optimizer and position in the schedule.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optim: Adam,
    pub iteration: usize,
    worlds: &'a WorldSet,
    episodes: &'a [Episode],
    /// Imitation paths per episode (defaults to the ground truth).
    il_paths: Option<&'a [Vec<usize>]>,
    perms: HashMap<usize, Vec<usize>>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        params: ModelParams,
        worlds: &'a WorldSet,
        episodes: &'a [Episode],
    ) -> Result<Self> {
        config.validate()?;
        if episodes.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        for e in episodes {
            worlds.get(e.world_seed)?;
        }
        let optim = Adam::new(config.optim.clone(), &params.store);
        Ok(Self {
            config,
            params,
            optim,
            iteration: 0,
            worlds,
            episodes,
            il_paths: None,
            perms: HashMap::new(),
        })
    }

    /// Teacher-forces the imitation branch along `paths[i]` for episode `i`.
    pub fn with_il_paths(mut self, paths: &'a [Vec<usize>]) -> Result<Self> {
        if paths.len() != self.episodes.len() {
            return Err(Error::Data("one imitation path per episode required".into()));
        }
        self.il_paths = Some(paths);
        Ok(self)
    }

    fn episode_index(&mut self, position: usize) -> usize {
        let n = self.episodes.len();
        let epoch = position / n;
        let seed = seed::derive(self.config.seed, 0xE90C ^ epoch as u64);
        let perm = self.perms.entry(epoch).or_insert_with(|| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            p
        });
        perm[position % n]
    }

    /// One optimizer update on one batch. Returns the batch-mean losses.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let b = self.config.batch_size;
        let it = self.iteration;
        let idx: Vec<usize> = (0..b).map(|j| self.episode_index(it * b + j)).collect();
        self.perms.retain(|&e, _| e + 1 >= (it * b) / self.episodes.len());
        let iter_seed = seed::derive(self.config.seed, it as u64);
        let params = &self.params;
        let worlds = self.worlds;
        let episodes = self.episodes;
        let il_paths = self.il_paths;
        let config = &self.config;
        let results = idx
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let e = &episodes[i];
                let plan = EpisodePlan {
                    episode: e,
                    il_path: il_paths.map_or(&e.gt_trajectory[..], |p| &p[i][..]),
                    frozen_advantages: None,
                };
                episode_gradients(params, worlds.get(e.world_seed)?, &plan, config, seed::derive(iter_seed, j as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grads = self.params.store.zeros_like();
        let mut mean = LossBreakdown::default();
        for (g, graph) in &results {
            grads.add_scaled(g, 1.0 / b as f64);
            mean.add(&graph.breakdown);
        }
        mean.scale(1.0 / b as f64);
        self.optim.step(&mut self.params.store, &mut grads)?;
        self.iteration += 1;
        Ok(mean)
    }

    /// Runs until `config.iterations`, logging a curve row every
    /// `log_interval` iterations (validation on `val` when given).
    pub fn run(
        &mut self,
        val: Option<(&WorldSet, &[Episode])>,
        mut on_row: impl FnMut(&CurveRow),
    ) -> Result<Vec<CurveRow>> {
        let mut rows = Vec::new();
        let mut acc = LossBreakdown::default();
        let mut count = 0usize;
        while self.iteration < self.config.iterations {
            let l = self.step()?;
            acc.add(&l);
            count += 1;
            if self.iteration % self.config.log_interval == 0 {
                acc.scale(1.0 / count as f64);
                let (val_sr, val_asks) = match val {
                    Some((w, eps)) if self.config.val_episodes > 0 && !eps.is_empty() => {
                        let n = self.config.val_episodes.min(eps.len());
                        let agent = if self.params.ask_enabled() {
                            AgentKind::Asa
                        } else {
                            AgentKind::Base
                        };
                        let plan = EvalPlan {
                            agent,
                            ..EvalPlan::base(self.config.max_steps)
                        };
                        let (_, m) = evaluate(&self.params, w, &eps[..n], &plan)?;
                        (m.success_rate, m.mean_questions)
                    }
                    _ => (f64::NAN, f64::NAN),
                };
                let row = CurveRow {
                    iter: self.iteration,
                    il_loss: acc.il,
                    rl_loss: acc.rl,
                    critic_loss: acc.critic,
                    entropy: acc.entropy,
                    val_sr,
                    val_asks,
                };
                on_row(&row);
                rows.push(row);
                acc = LossBreakdown::default();
                count = 0;
            }
        }
        Ok(rows)
    }

    /// Writes the model checkpoint at `path` and optimizer state at
    /// `path` + `.optim`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = serde_json::json!({
            "iteration": self.iteration,
            "train": self.config,
        });
        self.params.save_with_meta(path, extra)?;
        let (m, v) = self.optim.moments();
        let mut store = ParamStore::new();
        for (name, t) in m.iter() {
            store.insert(format!("m/{name}"), t.clone());
        }
        for (name, t) in v.iter() {
            store.insert(format!("v/{name}"), t.clone());
        }
        let meta = serde_json::json!({
            "step": self.optim.steps_taken(),
            "iteration": self.iteration,
        });
        write_checkpoint(&optim_path(path), &store, meta)
    }

    /// Restores parameters, optimizer state and iteration from [`Trainer::save`].
    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let (params, extra) = ModelParams::load_with_meta(path)?;
        if params.config != self.params.config {
            return Err(Error::Config("checkpoint model config differs from the trainer's".into()));
        }
        let op = optim_path(path);
        let (store, meta) = read_checkpoint(&op)?;
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for name in params.store.names() {
            let get = |k: String| {
                store.get(&k).cloned().ok_or_else(|| Error::Corrupt {
                    kind: "optimizer state",
                    path: op.clone(),
                    reason: format!("missing {k}"),
                })
            };
            m.insert(name.clone(), get(format!("m/{name}"))?);
            v.insert(name.clone(), get(format!("v/{name}"))?);
        }
        let step = meta["step"].as_u64().unwrap_or(0);
        self.optim = Adam::from_state(self.config.optim.clone(), step, m, v);
        self.iteration = extra["iteration"]
            .as_u64()
            .or_else(|| meta["iteration"].as_u64())
            .unwrap_or(0) as usize;
        self.params = params;
        self.perms.clear();
        Ok(())
    }
}

pub fn optim_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".optim");
    PathBuf::from(s)
}

/// Trains from `init` and writes the checkpoint plus `curve.csv` into `out`.
pub fn train(
    config: &TrainConfig,
    init: ModelParams,
    worlds: &WorldSet,
    episodes: &[Episode],
    val: Option<(&WorldSet, &[Episode])>,
    out: &Path,
) -> Result<(ModelParams, Vec<CurveRow>)> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut trainer = Trainer::new(config.clone(), init, worlds, episodes)?;
    let curve_path = out.join("curve.csv");
    let mut f = std::fs::File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
    writeln!(f, "{CURVE_HEADER}").map_err(|e| Error::io(&curve_path, e))?;
    let rows = trainer.run(val, |r| {
        let _ = writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.iter, r.il_loss, r.rl_loss, r.critic_loss, r.entropy, r.val_sr, r.val_asks
        );
        let _ = f.flush();
    })?;
    trainer.save(&out.join("model.ckpt"))?;
    Ok((trainer.params, rows))
}
