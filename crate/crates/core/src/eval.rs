//! Success test, aggregate metrics, batch evaluation and sweeps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WorldSet;
use crate::error::{Error, Result};
use crate::interact::{run_agent, AgentKind, InteractionTrace, RunOptions};
use crate::policy::ModelParams;
use crate::world::{Episode, WorldGraph};

/// Navigation error strictly below this counts as success (meters).
pub const SUCCESS_RADIUS: f64 = 3.0;

pub fn is_success(world: &WorldGraph, final_viewpoint: usize, target: usize) -> Result<bool> {
    Ok(world.distance(final_viewpoint, target)? < SUCCESS_RADIUS)
}

pub fn trace_success(world: &WorldGraph, trace: &InteractionTrace) -> Result<bool> {
    is_success(world, trace.final_viewpoint, trace.episode.target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success_rate: f64,
    pub mean_questions: f64,
    pub mean_move_steps: f64,
    /// Pooled: total asks over total decisions.
    pub ask_percentage: f64,
    /// Mean of per-episode ask percentages.
    pub ask_percentage_per_episode: f64,
    pub n_episodes: usize,
}

/// Pooled ask percentage from ask and move totals (or per-episode means).
pub fn ask_percentage(asks: f64, moves: f64) -> f64 {
    if asks + moves == 0.0 {
        0.0
    } else {
        asks / (asks + moves)
    }
}

/// Aggregates per-episode `(success, asks, moves)` triples.
pub fn aggregate_counts(rows: &[(bool, usize, usize)]) -> Result<Metrics> {
    if rows.is_empty() {
        return Err(Error::Data("cannot aggregate an empty trace set".into()));
    }
    let n = rows.len() as f64;
    let successes = rows.iter().filter(|r| r.0).count() as f64;
    let asks: usize = rows.iter().map(|r| r.1).sum();
    let moves: usize = rows.iter().map(|r| r.2).sum();
    let per_ep: f64 = rows
        .iter()
        .map(|r| ask_percentage(r.1 as f64, r.2 as f64))
        .sum::<f64>()
        / n;
    Ok(Metrics {
        success_rate: successes / n,
        mean_questions: asks as f64 / n,
        mean_move_steps: moves as f64 / n,
        ask_percentage: ask_percentage(asks as f64, moves as f64),
        ask_percentage_per_episode: per_ep,
        n_episodes: rows.len(),
    })
}

pub fn aggregate(worlds: &WorldSet, traces: &[InteractionTrace]) -> Result<Metrics> {
    let rows = traces
        .iter()
        .map(|t| {
            let w = worlds.get(t.episode.world_seed)?;
            Ok((trace_success(w, t)?, t.num_asks, t.num_moves))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_counts(&rows)
}

/// What to run for one evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub agent: AgentKind,
    pub epsilon: f64,
    pub options: RunOptions,
}

impl EvalPlan {
    pub fn base(max_steps: usize) -> Self {
        Self {
            agent: AgentKind::Base,
            epsilon: 0.5,
            options: RunOptions {
                max_steps,
                ..RunOptions::default()
            },
        }
    }
}

/// Runs every episode (in parallel, order-preserving) and aggregates.
pub fn evaluate(
    params: &ModelParams,
    worlds: &WorldSet,
    episodes: &[Episode],
    plan: &EvalPlan,
) -> Result<(Vec<InteractionTrace>, Metrics)> {
    let traces = episodes
        .par_iter()
        .map(|e| {
            let w = worlds.get(e.world_seed)?;
            run_agent(plan.agent, params, w, e, plan.epsilon, &plan.options)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = aggregate(worlds, &traces)?;
    Ok((traces, m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    RAsk,
    NoiseC,
    DataSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Epsilon => "epsilon",
            Self::RAsk => "r_ask",
            Self::NoiseC => "noise_c",
            Self::DataSize => "data_size",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(Self::Epsilon),
            "r_ask" | "r-ask" => Ok(Self::RAsk),
            "noise_c" | "noise-c" => Ok(Self::NoiseC),
            "data_size" | "data-size" => Ok(Self::DataSize),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub metrics: Metrics,
}

/// Evaluates one row per value. `checkpoints` holds either a single model
/// reused for every value or, for the `r_ask` axis, one model per value.
pub fn sweep(
    checkpoints: &[ModelParams],
    worlds: &WorldSet,
    episodes: &[Episode],
    axis: SweepAxis,
    values: &[f64],
    base: &EvalPlan,
) -> Result<Vec<SweepRow>> {
    if axis == SweepAxis::RAsk && checkpoints.len() != values.len() {
        return Err(Error::Config(format!(
            "r_ask sweep needs one checkpoint per value ({} given for {} values)",
            checkpoints.len(),
            values.len()
        )));
    }
    if checkpoints.is_empty() {
        return Err(Error::Config("sweep needs at least one checkpoint".into()));
    }
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut plan = base.clone();
            let mut model = &checkpoints[0];
            match axis {
                SweepAxis::Epsilon => plan.epsilon = v,
                SweepAxis::NoiseC => plan.options.oracle.noise_c = v,
                SweepAxis::RAsk | SweepAxis::DataSize => {
                    model = &checkpoints[i.min(checkpoints.len() - 1)];
                }
            }
            let (_, metrics) = evaluate(model, worlds, episodes, &plan)?;
            Ok(SweepRow {
                axis,
                value: v,
                metrics,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "axis,value,success_rate,mean_questions,mean_moves,ask_pct,n";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.axis.name(),
            r.value,
            r.metrics.success_rate,
            r.metrics.mean_questions,
            r.metrics.mean_move_steps,
            r.metrics.ask_percentage,
            r.metrics.n_episodes
        ));
    }
    s
}

/// Writes `<stem>.csv` and `<stem>.json` for a sweep.
pub fn write_sweep(dir: &Path, stem: &str, rows: &[SweepRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv, sweep_csv(rows)).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join(format!("{stem}.json"));
    let mut f = std::fs::File::create(&json).map_err(|e| Error::io(&json, e))?;
    serde_json::to_writer_pretty(&mut f, rows)?;
    f.write_all(b"\n").map_err(|e| Error::io(&json, e))
}

/// Parses a sweep CSV back into `(axis, value, sr, questions, moves, ask%, n)`.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(Error::Corrupt {
            kind: "sweep csv",
            path: path.to_path_buf(),
            reason: "unexpected header".into(),
        });
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Corrupt {
                kind: "sweep csv",
                path: path.to_path_buf(),
                reason: format!("bad row {l:?}"),
            };
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let n: usize = f[6].parse().map_err(|_| bad())?;
            Ok(SweepRow {
                axis: f[0].parse()?,
                value: num(f[1])?,
                metrics: Metrics {
                    success_rate: num(f[2])?,
                    mean_questions: num(f[3])?,
                    mean_move_steps: num(f[4])?,
                    ask_percentage: num(f[5])?,
                    ask_percentage_per_episode: f64::NAN,
                    n_episodes: n,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_failures_give_zero() {
        let m = aggregate_counts(&[(false, 0, 3), (false, 1, 4)]).unwrap();
        assert_eq!(m.success_rate, 0.0);
        assert_eq!(m.mean_questions, 0.5);
    }

    #[test]
    fn single_row_is_itself() {
        let m = aggregate_counts(&[(true, 2, 6)]).unwrap();
        assert_eq!(m.success_rate, 1.0);
        assert_eq!(m.mean_questions, 2.0);
        assert_eq!(m.mean_move_steps, 6.0);
        assert_eq!(m.ask_percentage, 0.25);
        assert_eq!(m.n_episodes, 1);
    }

    #[test]
    fn empty_is_error() {
        assert!(aggregate_counts(&[]).is_err());
    }
}
