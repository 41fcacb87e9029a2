use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use askroute::augment::{
    collect_interactions, curve_csv, data_efficiency_curve, finetune, pre_exploration_data, AugmentedSet,
};
use askroute::config::{Prepared, RunConfig};
use askroute::data::{write_dataset, write_jsonl};
use askroute::eval::{evaluate, sweep, write_sweep, SweepAxis};
use askroute::experiment::run_experiment;
use askroute::interact::{run_with, AgentKind, Answerer, AskRule, MCConfig};
use askroute::lang::{LangConfig, Vocabulary};
use askroute::oracle::OracleAnswer;
use askroute::policy::ModelParams;
use askroute::report::render_report;
use askroute::trainer::train;
use askroute::world::{generate_world, sample_episode, ActionSet, WorldGraph, HEADINGS};
use askroute::{seed, Error, Result};

#[derive(Parser)]
#[command(name = "askroute", version, about = "Navigation agents that can ask for directions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// World file (interactive) written by gen-world.
    #[arg(long, global = true)]
    world: Option<PathBuf>,
    /// Model checkpoint; repeat for one model per value on the r_ask axis.
    #[arg(long, global = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, global = true)]
    agent: Option<AgentKind>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long = "r-ask", global = true)]
    r_ask: Option<f64>,
    #[arg(long = "noise-c", global = true)]
    noise_c: Option<f64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one world.
    GenWorld,
    /// Generate the benchmark worlds and episode files.
    GenData,
    /// Train a model (base, or learned-ask with --agent asa).
    Train,
    /// Evaluate a checkpoint and dump traces.
    Run,
    /// Evaluate along one axis.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Collect interaction data and fine-tune on it and on pre-exploration data.
    Augment {
        /// Interacting model; defaults to the first --checkpoint.
        #[arg(long)]
        collector: Option<PathBuf>,
    },
    /// Data-efficiency curve of human-guided versus pre-exploration data.
    Curve {
        #[arg(long)]
        collector: Option<PathBuf>,
    },
    /// Render metrics CSVs into SVG plots and a summary table.
    Report {
        /// Directory to scan; defaults to --out.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Answer the agent's questions yourself.
    Interactive,
    /// Full study: base and learned-ask training, sweeps, ablation, augmentation.
    Pipeline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ASKROUTE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("ASKROUTE_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(a) = cli.agent {
        cfg.eval.agent = a;
    }
    if let Some(e) = cli.epsilon {
        cfg.eval.epsilon = e;
    }
    if let Some(r) = cli.r_ask {
        cfg.train.r_ask = r;
    }
    if let Some(c) = cli.noise_c {
        cfg.eval.options.oracle.noise_c = c;
    }
    Ok(cfg)
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::io(path, e))
}

fn checkpoint(cli: &Cli, i: usize) -> Result<ModelParams> {
    let p = cli
        .checkpoint
        .get(i)
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    ModelParams::load(p)
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = resolve(&cli)?;
    let out = cli.out.clone();
    create(&out)?;
    cfg.save(&out.join("config.json"))?;
    match &cli.command {
        Command::GenWorld => {
            let w = generate_world(&cfg.data.world, cfg.seed)?;
            w.save(&out.join("world.askw"))?;
            println!("world {}: {} viewpoints, {} edges", cfg.seed, w.len(), w.edge_count());
        }
        Command::GenData => {
            let p = cfg.prepare()?;
            let wdir = out.join("worlds");
            create(&wdir)?;
            for w in p.bench.all_worlds().iter() {
                w.save(&wdir.join(format!("{}.askw", w.seed)))?;
            }
            let vp = out.join("vocab.json");
            std::fs::write(&vp, p.bench.vocab.to_json()?).map_err(|e| Error::io(&vp, e))?;
            write_dataset(&out.join("train.jsonl"), &p.bench.train)?;
            write_dataset(&out.join("val_seen.jsonl"), &p.bench.val_seen)?;
            write_dataset(&out.join("unseen.jsonl"), &p.bench.unseen_pool)?;
            write_dataset(&out.join("t_a.jsonl"), &p.halves.t_a)?;
            write_dataset(&out.join("t_b.jsonl"), &p.halves.t_b)?;
            println!(
                "{} training, {} validation, {} held-out episodes ({} teaching / {} evaluation)",
                p.bench.train.len(),
                p.bench.val_seen.len(),
                p.bench.unseen_pool.len(),
                p.halves.t_a.len(),
                p.halves.t_b.len()
            );
        }
        Command::Train => {
            let p = cfg.prepare()?;
            let ask = cfg.eval.agent == AgentKind::Asa;
            let init = match cli.checkpoint.first() {
                Some(path) => ModelParams::load(path)?.with_ask(ask),
                None => ModelParams::init(&cfg.model_for(&p, ask), seed::derive(cfg.seed, 100))?,
            };
            let tc = askroute::trainer::TrainConfig {
                seed: seed::derive(cfg.seed, 101),
                ..cfg.train.clone()
            };
            let (params, rows) = train(&tc, init, &p.bench.seen, &p.bench.train, Some((&p.bench.seen, &p.bench.val_seen)), &out)?;
            if let Some(last) = rows.last() {
                println!("iteration {}: validation SR {:.3}, questions {:.2}", last.iter, last.val_sr, last.val_asks);
            }
            println!("checkpoint {} (ask {})", out.join("model.ckpt").display(), params.ask_enabled());
        }
        Command::Run => {
            let p = cfg.prepare()?;
            let params = checkpoint(&cli, 0)?;
            let eps = p.eval_episodes(&cfg.eval);
            let (traces, m) = evaluate(&params, p.eval_worlds(&cfg.eval), eps, &cfg.eval.plan())?;
            write_jsonl(&out.join("traces.jsonl"), &traces)?;
            write_json(&out.join("metrics.json"), &m)?;
            println!(
                "SR {:.3}  questions {:.2}  moves {:.2}  ask% {:.3}  n {}",
                m.success_rate, m.mean_questions, m.mean_move_steps, m.ask_percentage, m.n_episodes
            );
        }
        Command::Sweep { axis, values } => {
            let p = cfg.prepare()?;
            let models = (0..cli.checkpoint.len().max(1))
                .map(|i| checkpoint(&cli, i))
                .collect::<Result<Vec<_>>>()?;
            let eps = p.eval_episodes(&cfg.eval);
            let rows = sweep(&models, p.eval_worlds(&cfg.eval), eps, *axis, values, &cfg.eval.plan())?;
            write_sweep(&out, &format!("sweep_{}", axis.name()), &rows)?;
            for r in &rows {
                println!(
                    "{}={}: SR {:.3} questions {:.2} ask% {:.3}",
                    axis.name(),
                    r.value,
                    r.metrics.success_rate,
                    r.metrics.mean_questions,
                    r.metrics.ask_percentage
                );
            }
        }
        Command::Augment { collector } => {
            let p = cfg.prepare()?;
            let base = checkpoint(&cli, 0)?;
            let (human, pre) = augment_sets(&cfg, &p, &base, collector.as_deref(), &out)?;
            let t_b = &p.halves.t_b;
            let plan = askroute::eval::EvalPlan::base(cfg.eval.options.max_steps);
            let h = finetune(&base, &p.bench.unseen, &human, &cfg.augment.finetune)?;
            let n = human.take_usable(usize::MAX).len().min(pre.len());
            let f = finetune(&base, &p.bench.unseen, &pre.take_usable(n), &cfg.augment.finetune)?;
            h.save(&out.join("human_guided.ckpt"))?;
            f.save(&out.join("pre_exploration.ckpt"))?;
            let sr = |m: &ModelParams| -> Result<f64> { Ok(evaluate(m, &p.bench.unseen, t_b, &plan)?.1.success_rate) };
            let summary = serde_json::json!({
                "base_sr": sr(&base)?,
                "human_guided_sr": sr(&h)?,
                "pre_exploration_sr": sr(&f)?,
                "items": n,
            });
            write_json(&out.join("augment.json"), &summary)?;
            println!("{summary}");
        }
        Command::Curve { collector } => {
            let p = cfg.prepare()?;
            let base = checkpoint(&cli, 0)?;
            let (human, pre) = augment_sets(&cfg, &p, &base, collector.as_deref(), &out)?;
            let max = human.take_usable(usize::MAX).len().min(pre.len());
            let mut sizes: Vec<usize> = cfg.augment.sizes.iter().copied().filter(|&s| s < max).collect();
            sizes.push(max);
            let pts = data_efficiency_curve(&base, &p.bench.unseen, &human, &pre, &p.halves.t_b, &sizes, &cfg.augment.finetune)?;
            let path = out.join("augment_curve.csv");
            std::fs::write(&path, curve_csv(&pts)).map_err(|e| Error::io(&path, e))?;
            print!("{}", curve_csv(&pts));
        }
        Command::Report { input } => {
            let dir = input.clone().unwrap_or_else(|| out.clone());
            let files = render_report(&dir, &out.join("plots"))?;
            println!("{} plots and summary.md in {}", files.len(), out.join("plots").display());
        }
        Command::Interactive => interactive(&cli, &cfg, &out)?,
        Command::Pipeline => {
            let r = run_experiment(&cfg.experiment(), cfg.seed, &out)?;
            render_report(&out, &out.join("plots"))?;
            println!(
                "base SR {:.3}; learned-ask SR {:.3} with {:.2} questions (r_ask {})",
                r.base.success_rate, r.asa_tuned.eval.success_rate, r.asa_tuned.eval.mean_questions, r.asa_tuned.r_ask
            );
        }
    }
    Ok(())
}

fn augment_sets(
    cfg: &RunConfig,
    p: &Prepared,
    base: &ModelParams,
    collector: Option<&Path>,
    out: &Path,
) -> Result<(AugmentedSet, AugmentedSet)> {
    let agent_model = match collector {
        Some(c) => ModelParams::load(c)?,
        None => base.clone(),
    };
    let human = collect_interactions(
        &agent_model,
        &p.bench.unseen,
        &p.halves.t_a,
        cfg.augment.collector_agent,
        cfg.augment.collector_epsilon,
        cfg.eval.options.max_steps,
    )?;
    let pre = pre_exploration_data(
        &p.bench.unseen,
        &p.bench.vocab,
        &LangConfig::default(),
        cfg.augment.pre_exploration.unwrap_or(p.halves.t_a.len()),
        (cfg.data.min_len, cfg.data.max_len),
        seed::derive(cfg.seed, 400),
    )?;
    human.save(&out.join("human_guided.jsonl"))?;
    pre.save(&out.join("pre_exploration.jsonl"))?;
    Ok((human, pre))
}

/// Answers come from a person at the terminal.
struct Terminal<R, W> {
    input: R,
    output: W,
    vocab: Vocabulary,
}

impl<R: BufRead, W: Write> Terminal<R, W> {
    fn say(&mut self, s: &str) -> Result<()> {
        writeln!(self.output, "{s}").map_err(|e| Error::io("<stdout>", e))
    }

    fn landmark(&self, world: &WorldGraph, v: usize) -> Result<String> {
        let class = world.viewpoint(v)?.landmark;
        Ok(self.vocab.token(self.vocab.landmark_id(class, false)).unwrap_or("?").to_string())
    }
}

impl<R: BufRead, W: Write> Answerer for Terminal<R, W> {
    fn answer(&mut self, world: &WorldGraph, current: usize, target: usize, actions: &ActionSet) -> Result<OracleAnswer> {
        self.say("\nAgent: I am lost, please help me!")?;
        let view = world.view_features(current)?;
        let mut sectors = Vec::new();
        for k in 0..HEADINGS {
            let slot = HEADINGS + k;
            if let Some(v) = view.occupant[slot] {
                sectors.push(format!("{:>3}°: {}", (view.headings[slot].to_degrees().round() as i64).rem_euclid(360), self.landmark(world, v)?));
            }
        }
        self.say(&format!(
            "At viewpoint {current} ({}); goal is viewpoint {target} ({}), {:.1} m away.",
            self.landmark(world, current)?,
            self.landmark(world, target)?,
            world.distance(current, target)?
        ))?;
        self.say(&format!("In view: {}", sectors.join(", ")))?;
        for (i, m) in actions.moves.iter().enumerate() {
            self.say(&format!(
                "  [{i}] head {:>3}° to viewpoint {} ({}), then {:.1} m from the goal",
                (m.heading.to_degrees().round() as i64).rem_euclid(360),
                m.dest,
                self.landmark(world, m.dest)?,
                world.distance(m.dest, target)?
            ))?;
        }
        self.say(&format!("  [{}] stop here", actions.stop_index()))?;
        loop {
            write!(self.output, "Your answer: ").map_err(|e| Error::io("<stdout>", e))?;
            self.output.flush().map_err(|e| Error::io("<stdout>", e))?;
            let mut line = String::new();
            let n = self.input.read_line(&mut line).map_err(|e| Error::io("<stdin>", e))?;
            if n == 0 {
                return Err(Error::Data("input ended before the episode finished".into()));
            }
            match line.trim().parse::<usize>() {
                Ok(k) if k < actions.len() => {
                    return Ok(OracleAnswer {
                        action_index: k,
                        was_distorted: false,
                        truth_index: k,
                    })
                }
                _ => self.say(&format!("Please enter a number from 0 to {}.", actions.stop_index()))?,
            }
        }
    }
}

fn interactive(cli: &Cli, cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = checkpoint(cli, 0)?;
    let world = match &cli.world {
        Some(p) => WorldGraph::load(p)?,
        None => generate_world(&cfg.data.world, cfg.seed)?,
    };
    let vocab = Vocabulary::new(world.config.landmark_classes);
    let episode = sample_episode(&world, &vocab, &cfg.data.lang, cfg.seed, (cfg.data.min_len, cfg.data.max_len))?;
    let rule = match cfg.eval.agent {
        AgentKind::Asa => AskRule::Learned,
        AgentKind::Mc => AskRule::Confusion(MCConfig::new(cfg.eval.epsilon)?),
        AgentKind::Base => AskRule::Never,
    };
    let stdin = std::io::stdin();
    let mut term = Terminal {
        input: stdin.lock(),
        output: std::io::stdout(),
        vocab,
    };
    term.say(&format!("Instruction: {}", term.vocab.decode(&episode.instruction.token_ids)))?;
    let trace = run_with(&params, &world, &episode, rule, &cfg.eval.options, &mut term)?;
    let ok = askroute::eval::trace_success(&world, &trace)?;
    term.say(&format!(
        "\nEpisode over: {} after {} moves and {} questions.",
        if ok { "reached the goal" } else { "missed the goal" },
        trace.num_moves,
        trace.num_asks
    ))?;
    let p = out.join("trace.json");
    std::fs::write(&p, trace.to_json()?).map_err(|e| Error::io(&p, e))
}
