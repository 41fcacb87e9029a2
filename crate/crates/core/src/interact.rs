//! Evaluation-time episode runners: no interaction, confusion-threshold
//! asking, and the learned ask action.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Oracle, OracleAnswer, OracleConfig};
use crate::policy::{argmax, ModelParams, Session};
use crate::world::{ActionSet, Episode, WorldGraph};

pub const TRACE_VERSION: u32 = 1;

/// Consecutive asks allowed at one viewpoint when answers do not force a move.
pub const FREE_ASK_CAP: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Base,
    Mc,
    Asa,
}

impl std::str::FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Self::Base),
            "mc" => Ok(Self::Mc),
            "asa" => Ok(Self::Asa),
            other => Err(Error::Config(format!("unknown agent {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MCConfig {
    /// Ask when the two most likely actions differ by less than this.
    pub epsilon: f64,
}

impl MCConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon {epsilon} outside (0, 1)")));
        }
        Ok(Self { epsilon })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub max_steps: usize,
    /// Answers only inform the next decision instead of being executed.
    pub free_ask: bool,
    pub oracle: OracleConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_steps: 20,
            free_ask: false,
            oracle: OracleConfig::default(),
        }
    }
}

/// Anything that can answer the agent's question.
pub trait Answerer {
    fn answer(
        &mut self,
        world: &WorldGraph,
        current: usize,
        target: usize,
        actions: &ActionSet,
    ) -> Result<OracleAnswer>;
}

impl Answerer for Oracle {
    fn answer(
        &mut self,
        world: &WorldGraph,
        current: usize,
        target: usize,
        actions: &ActionSet,
    ) -> Result<OracleAnswer> {
        Oracle::answer(self, world, current, target, actions)
    }
}

/// One decision of the agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub viewpoint: usize,
    /// Action distribution in action-set order (ask last when present).
    pub probs: Vec<f64>,
    /// Index the policy picked (the ask index for asks).
    pub chosen: usize,
    pub is_ask: bool,
    pub answer: Option<OracleAnswer>,
    /// Action index executed at this step, if any.
    pub executed: Option<usize>,
    /// Viewpoint after the step.
    pub next_viewpoint: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRef {
    pub world_seed: u64,
    pub start: usize,
    pub target: usize,
    pub episode_seed: u64,
}

impl From<&Episode> for EpisodeRef {
    fn from(e: &Episode) -> Self {
        Self {
            world_seed: e.world_seed,
            start: e.start,
            target: e.target,
            episode_seed: e.episode_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTrace {
    pub version: u32,
    pub agent: AgentKind,
    pub episode: EpisodeRef,
    pub steps: Vec<TraceStep>,
    /// Viewpoints visited, start first.
    pub path: Vec<usize>,
    pub final_viewpoint: usize,
    pub num_asks: usize,
    /// Executed moves plus the stop decision.
    pub num_moves: usize,
    pub truncated: bool,
}

impl InteractionTrace {
    pub fn ask_percentage(&self) -> f64 {
        let total = self.num_asks + self.num_moves;
        if total == 0 {
            0.0
        } else {
            self.num_asks as f64 / total as f64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        if t.version != TRACE_VERSION {
            return Err(Error::Data(format!("unsupported trace version {}", t.version)));
        }
        Ok(t)
    }
}

/// How the agent decides whether to ask.
#[derive(Clone, Copy, Debug)]
pub enum AskRule {
    Never,
    Confusion(MCConfig),
    Learned,
}

/// Greedy decoding without interaction.
pub fn run_base(
    params: &ModelParams,
    world: &WorldGraph,
    episode: &Episode,
    max_steps: usize,
) -> Result<InteractionTrace> {
    let opts = RunOptions {
        max_steps,
        ..RunOptions::default()
    };
    let mut oracle = Oracle::for_episode(&opts.oracle, episode.episode_seed)?;
    run_with(params, world, episode, AskRule::Never, &opts, &mut oracle)
}

/// Greedy decoding that asks whenever the top two probabilities are
/// closer than `epsilon`.
pub fn run_mc(
    params: &ModelParams,
    world: &WorldGraph,
    episode: &Episode,
    mc: MCConfig,
    opts: &RunOptions,
) -> Result<InteractionTrace> {
    let mut oracle = Oracle::for_episode(&opts.oracle, episode.episode_seed)?;
    run_with(params, world, episode, AskRule::Confusion(mc), opts, &mut oracle)
}

/// Greedy decoding over moves, stop and the ask action.
pub fn run_asa(
    params: &ModelParams,
    world: &WorldGraph,
    episode: &Episode,
    opts: &RunOptions,
) -> Result<InteractionTrace> {
    let mut oracle = Oracle::for_episode(&opts.oracle, episode.episode_seed)?;
    run_with(params, world, episode, AskRule::Learned, opts, &mut oracle)
}

/// Dispatch on agent kind; `epsilon` is only read for the confusion agent.
pub fn run_agent(
    kind: AgentKind,
    params: &ModelParams,
    world: &WorldGraph,
    episode: &Episode,
    epsilon: f64,
    opts: &RunOptions,
) -> Result<InteractionTrace> {
    match kind {
        AgentKind::Base => {
            let mut oracle = Oracle::for_episode(&opts.oracle, episode.episode_seed)?;
            run_with(params, world, episode, AskRule::Never, opts, &mut oracle)
        }
        AgentKind::Mc => run_mc(params, world, episode, MCConfig::new(epsilon)?, opts),
        AgentKind::Asa => run_asa(params, world, episode, opts),
    }
}

/// Runs one episode with any answer source.
pub fn run_with(
    params: &ModelParams,
    world: &WorldGraph,
    episode: &Episode,
    rule: AskRule,
    opts: &RunOptions,
    answerer: &mut dyn Answerer,
) -> Result<InteractionTrace> {
    if episode.world_seed != world.seed {
        return Err(Error::Data(format!(
            "episode belongs to world {} but world {} was given",
            episode.world_seed, world.seed
        )));
    }
    let (model, kind) = match rule {
        AskRule::Learned => {
            if !params.ask_enabled() {
                return Err(Error::Config(
                    "learned-ask agent needs an ask-enabled checkpoint".into(),
                ));
            }
            (params.clone(), AgentKind::Asa)
        }
        AskRule::Never => (params.with_ask(false), AgentKind::Base),
        AskRule::Confusion(_) => (params.with_ask(false), AgentKind::Mc),
    };
    let mut session = Session::start(&model, &episode.instruction.token_ids)?;
    let mut current = episode.start;
    let mut trace = InteractionTrace {
        version: TRACE_VERSION,
        agent: kind,
        episode: episode.into(),
        steps: Vec::new(),
        path: vec![current],
        final_viewpoint: current,
        num_asks: 0,
        num_moves: 0,
        truncated: true,
    };
    let mut consecutive_asks = 0;
    let mut decisions = 0;
    while decisions < opts.max_steps {
        decisions += 1;
        let view = world.view_features(current)?;
        let actions = world.navigable_actions(current)?;
        let out = session.step(&view, &actions)?;
        let m = actions.len();
        let probs = out.probs;
        let wants_ask = match rule {
            AskRule::Never => false,
            AskRule::Confusion(mc) => {
                let mut sorted = probs[..m].to_vec();
                sorted.sort_by(|a, b| b.total_cmp(a));
                sorted[0] - sorted[1] < mc.epsilon
            }
            AskRule::Learned => {
                let capped = opts.free_ask && consecutive_asks >= FREE_ASK_CAP;
                !capped && argmax(&probs) == m
            }
        };
        let mut step = TraceStep {
            viewpoint: current,
            probs: probs.clone(),
            chosen: 0,
            is_ask: wants_ask,
            answer: None,
            executed: None,
            next_viewpoint: current,
        };
        let action = if wants_ask {
            trace.num_asks += 1;
            step.chosen = m;
            let ans = answerer.answer(world, current, episode.target, &actions)?;
            if ans.action_index >= m {
                return Err(Error::Data(format!(
                    "answer {} out of range for {m} actions",
                    ans.action_index
                )));
            }
            step.answer = Some(ans);
            if opts.free_ask {
                consecutive_asks += 1;
                session.executed(&actions, ans.action_index);
                trace.steps.push(step);
                continue;
            }
            ans.action_index
        } else {
            let a = argmax(&probs[..m]);
            step.chosen = a;
            a
        };
        consecutive_asks = 0;
        step.executed = Some(action);
        trace.num_moves += 1;
        session.executed(&actions, action);
        if action == actions.stop_index() {
            trace.steps.push(step);
            trace.truncated = false;
            break;
        }
        current = actions.moves[action].dest;
        step.next_viewpoint = current;
        trace.path.push(current);
        trace.steps.push(step);
    }
    trace.final_viewpoint = current;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_bounds() {
        assert!(MCConfig::new(0.0).is_err());
        assert!(MCConfig::new(1.0).is_err());
        assert!(MCConfig::new(0.3).is_ok());
    }

    #[test]
    fn ask_percentage_formula() {
        let t = InteractionTrace {
            version: TRACE_VERSION,
            agent: AgentKind::Mc,
            episode: EpisodeRef {
                world_seed: 0,
                start: 0,
                target: 0,
                episode_seed: 0,
            },
            steps: vec![],
            path: vec![0],
            final_viewpoint: 0,
            num_asks: 2,
            num_moves: 6,
            truncated: false,
        };
        assert_eq!(t.ask_percentage(), 0.25);
        let back = InteractionTrace::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
