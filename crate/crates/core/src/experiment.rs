//! End-to-end desk-scale study: benchmark generation, base and learned-ask
//! training, confusion and noise sweeps, the shaping ablation and the
//! continual-learning comparison. Every metrics table is written as CSV.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{
    collect_interactions, curve_csv, data_efficiency_curve, pre_exploration_data, split, CurvePoint, FinetuneConfig,
    FinetuneMode, SplitMode,
};
use crate::data::{generate_benchmark, Benchmark, DataConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, sweep_csv, EvalPlan, Metrics, SweepAxis, SweepRow};
use crate::interact::AgentKind;
use crate::lang::LangConfig;
use crate::policy::{ModelConfig, ModelParams};
use crate::seed;
use crate::trainer::{train, TrainConfig};
use crate::world::Episode;

/// Knobs of the study itself, beyond data, model and training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Iterations of learned-ask training, started from the base weights.
    pub asa_iterations: usize,
    /// Policy-gradient weight during learned-ask training. The ask logit is
    /// taught only by this term.
    pub asa_rl_weight: f64,
    /// Separately trained penalties for the penalty-trend table.
    pub r_ask_trend: Vec<f64>,
    /// Penalties searched for the budgeted model.
    pub r_ask_candidates: Vec<f64>,
    /// Training runs per candidate, each with its own sampling seed. Of all
    /// runs within the question budget on the tuning slice, the one with the
    /// best tuning-slice success rate is kept.
    pub tune_restarts: usize,
    pub question_budget: f64,
    /// Teaching-half episodes used to tune the penalty and pick the collector.
    pub tune_episodes: usize,
    pub epsilons: Vec<f64>,
    /// Confusion threshold used in the noise sweep.
    pub noise_epsilon: f64,
    pub noise_levels: Vec<f64>,
    /// Curve sizes below the maximum; the usable maximum is always appended.
    pub curve_sizes: Vec<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            asa_iterations: 1000,
            asa_rl_weight: 0.1,
            r_ask_trend: vec![0.1, 0.3, 0.5],
            r_ask_candidates: vec![1.25, 1.375, 1.5, 1.625, 1.75, 2.0],
            tune_restarts: 2,
            question_budget: 1.5,
            tune_episodes: 150,
            epsilons: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            noise_epsilon: 0.3,
            noise_levels: vec![0.0, 0.2, 0.4],
            curve_sizes: vec![0, 100, 250],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    /// Base (no-ask) training; also the template for learned-ask runs.
    pub train: TrainConfig,
    pub split_mode: SplitMode,
    pub finetune: FinetuneConfig,
    pub max_steps: usize,
    pub study: StudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split_mode: SplitMode::Disjoint,
            finetune: FinetuneConfig {
                mode: FinetuneMode::Mixed,
                ..FinetuneConfig::default()
            },
            max_steps: 20,
            study: StudyConfig::default(),
        }
    }
}

/// Metrics of one learned-ask model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsaResult {
    pub r_ask: f64,
    /// Index of the training run for this penalty.
    pub restart: usize,
    pub dev_enabled: bool,
    pub tune: Metrics,
    pub eval: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub t_a: usize,
    pub t_b: usize,
    pub base: Metrics,
    pub mc_epsilon: Vec<SweepRow>,
    pub asa_trend: Vec<AsaResult>,
    /// Every tuning run, by penalty then restart.
    pub asa_tuning: Vec<AsaResult>,
    pub asa_tuned: AsaResult,
    pub asa_no_dev: AsaResult,
    pub asa_noise: Vec<SweepRow>,
    pub mc_noise: Vec<SweepRow>,
    pub collector_r_ask: f64,
    pub human_items: usize,
    pub curve_mixed: Vec<CurvePoint>,
    pub curve_supervised: Vec<CurvePoint>,
    /// Wall-clock cost; kept out of the written report so reruns compare
    /// byte for byte.
    #[serde(skip)]
    pub timings: Timings,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timings {
    pub base_train_s: f64,
    /// Sum over every penalty candidate tried.
    pub asa_tuning_train_s: f64,
    pub asa_eval_s: f64,
}

fn write(out: &Path, name: &str, body: &str) -> Result<()> {
    let p = out.join(name);
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
}

fn row(axis: SweepAxis, value: f64, metrics: Metrics) -> SweepRow {
    SweepRow { axis, value, metrics }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    bench: &'a Benchmark,
    base: &'a ModelParams,
    tune: &'a [Episode],
    t_b: &'a [Episode],
    seed: u64,
    out: &'a Path,
}

impl Ctx<'_> {
    fn plan(&self, agent: AgentKind) -> EvalPlan {
        EvalPlan {
            agent,
            ..EvalPlan::base(self.cfg.max_steps)
        }
    }

    fn train_asa(&self, r_ask: f64, dev_enabled: bool, restart: usize) -> Result<(ModelParams, AsaResult)> {
        let mut tag = format!("asa_r{r_ask}_{}", if dev_enabled { "dev" } else { "nodev" });
        if restart > 0 {
            tag.push_str(&format!("_{restart}"));
        }
        let tc = TrainConfig {
            iterations: self.cfg.study.asa_iterations,
            rl_weight: self.cfg.study.asa_rl_weight,
            r_ask,
            dev_enabled,
            seed: seed::derive(self.seed, 300 + restart as u64),
            ..self.cfg.train.clone()
        };
        let (params, _) = train(
            &tc,
            self.base.with_ask(true),
            &self.bench.seen,
            &self.bench.train,
            Some((&self.bench.seen, &self.bench.val_seen)),
            &self.out.join(&tag),
        )?;
        let plan = self.plan(AgentKind::Asa);
        let tune = evaluate(&params, &self.bench.unseen, self.tune, &plan)?.1;
        let eval = evaluate(&params, &self.bench.unseen, self.t_b, &plan)?.1;
        Ok((
            params,
            AsaResult {
                r_ask,
                restart,
                dev_enabled,
                tune,
                eval,
            },
        ))
    }
}

/// Within-budget runs beat over-budget ones. Among within-budget runs the
/// higher tuning-slice success rate wins; over budget, fewer questions win.
/// Ties keep the earlier run.
fn better_tuned(new: &AsaResult, best: Option<&AsaResult>, budget: f64) -> bool {
    let Some(best) = best else { return true };
    let (n_ok, b_ok) = (new.tune.mean_questions <= budget, best.tune.mean_questions <= budget);
    match (n_ok, b_ok) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => new.tune.success_rate > best.tune.success_rate,
        (false, false) => new.tune.mean_questions < best.tune.mean_questions,
    }
}

/// Runs the whole study for one seed and writes its tables into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, seed_value: u64, out: &Path) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if cfg.study.r_ask_candidates.is_empty() || cfg.study.r_ask_trend.is_empty() {
        return Err(Error::Config("penalty lists must not be empty".into()));
    }
    let bench = generate_benchmark(&cfg.data, seed_value)?;
    let halves = split(&bench.unseen_pool, cfg.split_mode, seed::derive(seed_value, 200))?;
    let tune = &halves.t_a[..cfg.study.tune_episodes.min(halves.t_a.len())];
    let t_b = &halves.t_b;

    let model = ModelConfig {
        vocab_size: bench.vocab.len(),
        vis_dim: cfg.data.world.vis_dim,
        ask_enabled: false,
        ..cfg.model.clone()
    };
    let init = ModelParams::init(&model, seed::derive(seed_value, 100))?;
    let base_cfg = TrainConfig {
        seed: seed::derive(seed_value, 101),
        ..cfg.train.clone()
    };
    let clock = Instant::now();
    let (base, _) = train(
        &base_cfg,
        init,
        &bench.seen,
        &bench.train,
        Some((&bench.seen, &bench.val_seen)),
        &out.join("base"),
    )?;
    let mut timings = Timings {
        base_train_s: clock.elapsed().as_secs_f64(),
        ..Timings::default()
    };
    let ctx = Ctx {
        cfg,
        bench: &bench,
        base: &base,
        tune,
        t_b,
        seed: seed_value,
        out,
    };

    let base_m = evaluate(&base, &bench.unseen, t_b, &ctx.plan(AgentKind::Base))?.1;

    // Confusion threshold sweep on the fixed base model.
    let mut mc_epsilon = Vec::new();
    for &eps in &cfg.study.epsilons {
        let plan = EvalPlan {
            epsilon: eps,
            ..ctx.plan(AgentKind::Mc)
        };
        mc_epsilon.push(row(SweepAxis::Epsilon, eps, evaluate(&base, &bench.unseen, t_b, &plan)?.1));
    }
    write(out, "mc_epsilon.csv", &sweep_csv(&mc_epsilon))?;

    // Penalty trend: separately trained learned-ask models.
    let mut trend = Vec::new();
    let mut trend_models = Vec::new();
    for &r in &cfg.study.r_ask_trend {
        let (p, res) = ctx.train_asa(r, true, 0)?;
        trend_models.push(p);
        trend.push(res);
    }
    let trend_rows: Vec<SweepRow> = trend
        .iter()
        .map(|a| row(SweepAxis::RAsk, a.r_ask, a.eval.clone()))
        .collect();
    write(out, "asa_r_ask.csv", &sweep_csv(&trend_rows))?;

    // Penalty tuned on the teaching half to respect the question budget.
    let mut tuning = Vec::new();
    let mut tuned: Option<(ModelParams, AsaResult)> = None;
    let clock = Instant::now();
    for &r in &cfg.study.r_ask_candidates {
        for k in 0..cfg.study.tune_restarts.max(1) {
            let (p, res) = ctx.train_asa(r, true, k)?;
            tuning.push(res.clone());
            if better_tuned(&res, tuned.as_ref().map(|t| &t.1), cfg.study.question_budget) {
                tuned = Some((p, res));
            }
        }
    }
    let (tuned_params, tuned_res) = tuned.expect("candidate list checked non-empty");
    timings.asa_tuning_train_s = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    evaluate(&tuned_params, &bench.unseen, t_b, &ctx.plan(AgentKind::Asa))?;
    timings.asa_eval_s = clock.elapsed().as_secs_f64();
    let tuning_rows: Vec<SweepRow> = tuning
        .iter()
        .map(|a| row(SweepAxis::RAsk, a.r_ask, a.eval.clone()))
        .collect();
    write(out, "asa_tuning.csv", &sweep_csv(&tuning_rows))?;

    // Shaping ablation at the tuned penalty.
    let (_, no_dev) = ctx.train_asa(tuned_res.r_ask, false, tuned_res.restart)?;
    let ablation = vec![
        row(SweepAxis::RAsk, tuned_res.r_ask, tuned_res.eval.clone()),
        row(SweepAxis::RAsk, no_dev.r_ask, no_dev.eval.clone()),
    ];
    write(out, "dev_ablation.csv", &sweep_csv(&ablation))?;

    // Oracle noise.
    let mut asa_noise = Vec::new();
    let mut mc_noise = Vec::new();
    for &c in &cfg.study.noise_levels {
        let mut plan = ctx.plan(AgentKind::Asa);
        plan.options.oracle.noise_c = c;
        asa_noise.push(row(
            SweepAxis::NoiseC,
            c,
            evaluate(&tuned_params, &bench.unseen, t_b, &plan)?.1,
        ));
        let mut plan = ctx.plan(AgentKind::Mc);
        plan.epsilon = cfg.study.noise_epsilon;
        plan.options.oracle.noise_c = c;
        mc_noise.push(row(SweepAxis::NoiseC, c, evaluate(&base, &bench.unseen, t_b, &plan)?.1));
    }
    write(out, "asa_noise.csv", &sweep_csv(&asa_noise))?;
    write(out, "mc_noise.csv", &sweep_csv(&mc_noise))?;

    // Continual learning: the learned-ask model that succeeds most on the
    // tuning slice teaches; the template speaker describes the baseline.
    let (best, _) = trend
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, a)| {
            if a.tune.success_rate > acc.1 {
                (i, a.tune.success_rate)
            } else {
                acc
            }
        });
    let collector = &trend_models[best];
    let human = collect_interactions(
        collector,
        &bench.unseen,
        &halves.t_a,
        AgentKind::Asa,
        0.5,
        cfg.max_steps,
    )?;
    human.save(&out.join("human_guided.jsonl"))?;
    let usable = human.items.iter().filter(|i| !i.truncated).count();
    let pre = pre_exploration_data(
        &bench.unseen,
        &bench.vocab,
        &LangConfig::default(),
        halves.t_a.len(),
        (cfg.data.min_len, cfg.data.max_len),
        seed::derive(seed_value, 400),
    )?;
    pre.save(&out.join("pre_exploration.jsonl"))?;
    let max = usable.min(pre.len());
    let mut sizes: Vec<usize> = cfg.study.curve_sizes.iter().copied().filter(|&s| s < max).collect();
    sizes.push(max);
    let mixed_cfg = FinetuneConfig {
        mode: FinetuneMode::Mixed,
        train: TrainConfig {
            seed: seed::derive(seed_value, 500),
            ..cfg.finetune.train.clone()
        },
        ..cfg.finetune.clone()
    };
    let curve_mixed = data_efficiency_curve(&base, &bench.unseen, &human, &pre, t_b, &sizes, &mixed_cfg)?;
    write(out, "augment_curve.csv", &curve_csv(&curve_mixed))?;
    let sup_cfg = FinetuneConfig {
        mode: FinetuneMode::Supervised,
        ..mixed_cfg
    };
    let curve_supervised = data_efficiency_curve(&base, &bench.unseen, &human, &pre, t_b, &[max], &sup_cfg)?;
    write(out, "augment_supervised.csv", &curve_csv(&curve_supervised))?;

    let report = ExperimentReport {
        seed: seed_value,
        t_a: halves.t_a.len(),
        t_b: t_b.len(),
        base: base_m,
        mc_epsilon,
        asa_trend: trend,
        asa_tuning: tuning,
        asa_tuned: tuned_res,
        asa_no_dev: no_dev,
        asa_noise,
        mc_noise,
        collector_r_ask: cfg.study.r_ask_trend[best],
        human_items: usable,
        curve_mixed,
        curve_supervised,
        timings,
    };
    let p = out.join("report.json");
    std::fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    let c = out.join("config.json");
    std::fs::write(&c, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&c, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(q: f64, sr: f64) -> AsaResult {
        let tune = Metrics {
            success_rate: sr,
            mean_questions: q,
            mean_move_steps: 5.0,
            ask_percentage: 0.0,
            ask_percentage_per_episode: 0.0,
            n_episodes: 10,
        };
        AsaResult {
            r_ask: 1.0,
            restart: 0,
            dev_enabled: true,
            tune: tune.clone(),
            eval: tune,
        }
    }

    #[test]
    fn tuned_run_prefers_budget_then_success() {
        let pick = |runs: &[AsaResult]| {
            let mut best: Option<&AsaResult> = None;
            for r in runs {
                if better_tuned(r, best, 1.5) {
                    best = Some(r);
                }
            }
            (best.unwrap().tune.mean_questions, best.unwrap().tune.success_rate)
        };
        assert_eq!(pick(&[run(3.0, 0.9), run(1.4, 0.3), run(0.5, 0.2)]), (1.4, 0.3));
        assert_eq!(pick(&[run(1.0, 0.2), run(1.5, 0.4), run(2.0, 0.8)]), (1.5, 0.4));
        assert_eq!(pick(&[run(3.0, 0.9), run(2.0, 0.5)]), (2.0, 0.5));
        assert_eq!(pick(&[run(1.0, 0.3), run(1.2, 0.3)]), (1.0, 0.3));
    }
}
