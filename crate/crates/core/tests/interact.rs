use askroute::eval::ask_percentage;
use askroute::interact::{
    run_agent, run_asa, run_base, run_mc, run_with, AgentKind, Answerer, AskRule, InteractionTrace, MCConfig,
    RunOptions,
};
use askroute::lang::{LangConfig, Vocabulary};
use askroute::oracle::{teacher_action, OracleAnswer, OracleConfig};
use askroute::policy::{ModelConfig, ModelParams};
use askroute::world::{generate_world, sample_episode, ActionSet, Episode, WorldConfig, WorldGraph};
use askroute::{Error, Result};

fn world_config() -> WorldConfig {
    WorldConfig {
        num_viewpoints: 30,
        vis_dim: 4,
        landmark_classes: 6,
        ..WorldConfig::default()
    }
}

fn model(vocab: &Vocabulary, ask: bool, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        word_dim: 6,
        vis_dim: 4,
        hidden: 8,
        ask_enabled: ask,
        init_scale: 1.0,
    };
    ModelParams::init(&cfg, seed).unwrap()
}

fn setup() -> (WorldGraph, Vocabulary, Vec<Episode>) {
    let w = generate_world(&world_config(), 12).unwrap();
    let vocab = Vocabulary::new(6);
    let eps = (0..40)
        .map(|i| sample_episode(&w, &vocab, &LangConfig::default(), 500 + i, (2, 5)).unwrap())
        .collect();
    (w, vocab, eps)
}

fn opts() -> RunOptions {
    RunOptions {
        max_steps: 20,
        ..RunOptions::default()
    }
}

#[test]
fn runs_are_deterministic() {
    let (w, vocab, eps) = setup();
    let p = model(&vocab, true, 1);
    for e in &eps[..10] {
        assert_eq!(run_asa(&p, &w, e, &opts()).unwrap(), run_asa(&p, &w, e, &opts()).unwrap());
        let mc = MCConfig::new(0.3).unwrap();
        assert_eq!(run_mc(&p, &w, e, mc, &opts()).unwrap(), run_mc(&p, &w, e, mc, &opts()).unwrap());
    }
}

#[test]
fn tiny_threshold_behaves_like_base() {
    let (w, vocab, eps) = setup();
    let p = model(&vocab, false, 2);
    for e in &eps {
        let base = run_base(&p, &w, e, 20).unwrap();
        let mc = run_mc(&p, &w, e, MCConfig::new(1e-12).unwrap(), &opts()).unwrap();
        assert_eq!(mc.num_asks, 0);
        assert_eq!(mc.path, base.path);
        assert_eq!(mc.num_moves, base.num_moves);
    }
}

#[test]
fn asking_everywhere_follows_shortest_path() {
    let (w, vocab, eps) = setup();
    let p = model(&vocab, false, 3);
    let mc = MCConfig::new(1.0 - 1e-9).unwrap();
    for e in &eps {
        let t = run_mc(&p, &w, e, mc, &opts()).unwrap();
        assert!(t.steps.iter().all(|s| s.is_ask), "every step asks");
        assert_eq!(t.final_viewpoint, e.target);
        let hops = w.hop_count(e.start, e.target).unwrap();
        // Shortest-path moves plus the stop decision.
        assert_eq!(t.num_moves, hops + 1);
        assert_eq!(t.path.len(), hops + 1);
        assert!(!t.truncated);
    }
}

#[test]
fn learned_ask_needs_ask_enabled_model() {
    let (w, vocab, eps) = setup();
    let p = model(&vocab, false, 4);
    let err = run_asa(&p, &w, &eps[0], &opts()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(MCConfig::new(0.0).is_err());
    assert!(MCConfig::new(1.0).is_err());
}

#[test]
fn episode_from_another_world_rejected() {
    let (_, vocab, eps) = setup();
    let other = generate_world(&world_config(), 13).unwrap();
    let p = model(&vocab, false, 4);
    assert!(run_base(&p, &other, &eps[0], 20).is_err());
}

#[test]
fn trace_counts_and_round_trip() {
    let (w, vocab, eps) = setup();
    let p = model(&vocab, false, 5);
    let mc = MCConfig::new(0.4).unwrap();
    let mut asked = 0;
    for e in &eps {
        let t = run_mc(&p, &w, e, mc, &opts()).unwrap();
        let asks = t.steps.iter().filter(|s| s.is_ask).count();
        let moves = t.steps.iter().filter(|s| s.executed.is_some()).count();
        assert_eq!(t.num_asks, asks);
        assert_eq!(t.num_moves, moves);
        assert_eq!(t.ask_percentage(), ask_percentage(asks as f64, moves as f64));
        assert_eq!(*t.path.last().unwrap(), t.final_viewpoint);
        let back = InteractionTrace::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        asked += asks;
    }
    assert!(asked > 0);
    let mut json: serde_json::Value = serde_json::from_str(&run_base(&p, &w, &eps[0], 20).unwrap().to_json().unwrap()).unwrap();
    json["version"] = serde_json::json!(99);
    assert!(InteractionTrace::from_json(&json.to_string()).is_err());
}

/// Answers with the shortest-path action, like a person reading the map.
struct Scripted;

impl Answerer for Scripted {
    fn answer(&mut self, world: &WorldGraph, current: usize, target: usize, actions: &ActionSet) -> Result<OracleAnswer> {
        let k = teacher_action(world, current, target, actions)?;
        Ok(OracleAnswer {
            action_index: k,
            was_distorted: false,
            truth_index: k,
        })
    }
}

#[test]
fn scripted_answers_match_perfect_oracle() {
    let (w, vocab, eps) = setup();
    let p = model(&vocab, true, 6);
    for e in &eps {
        let sim = run_agent(AgentKind::Mc, &p, &w, e, 0.3, &opts()).unwrap();
        let scripted = run_with(&p, &w, e, AskRule::Confusion(MCConfig::new(0.3).unwrap()), &opts(), &mut Scripted).unwrap();
        assert_eq!(sim, scripted);
        let sim = run_asa(&p, &w, e, &opts()).unwrap();
        let scripted = run_with(&p, &w, e, AskRule::Learned, &opts(), &mut Scripted).unwrap();
        assert_eq!(sim, scripted);
    }
}

#[test]
fn noisy_answers_stay_in_range_and_are_reproducible() {
    let (w, vocab, eps) = setup();
    let p = model(&vocab, false, 7);
    let noisy = RunOptions {
        oracle: OracleConfig {
            noise_c: 0.4,
            ..OracleConfig::default()
        },
        ..opts()
    };
    let mut distorted = 0;
    for e in &eps {
        let a = run_agent(AgentKind::Mc, &p, &w, e, 0.999, &noisy).unwrap();
        let b = run_agent(AgentKind::Mc, &p, &w, e, 0.999, &noisy).unwrap();
        assert_eq!(a, b);
        distorted += a.steps.iter().filter(|s| s.answer.is_some_and(|x| x.was_distorted)).count();
    }
    assert!(distorted > 0);
}

/// Junction with two doors whose rooms hold the same landmark; the goal is
/// behind the second door.
fn two_doors() -> WorldGraph {
    let positions = vec![
        [0.0, 0.0, 0.0],
        [3.0, 1.5, 0.0],
        [3.0, -1.5, 0.0],
        [6.0, 1.5, 0.0],
        [6.0, -1.5, 0.0],
    ];
    let mut cfg = world_config();
    cfg.landmark_classes = 2;
    WorldGraph::from_layout(&cfg, 40, positions, vec![0, 1, 1, 0, 0], &[(0, 1), (0, 2), (1, 3), (2, 4)]).unwrap()
}

#[test]
fn ambiguous_junction_triggers_question_and_recovers() {
    let w = two_doors();
    let vocab = Vocabulary::new(2);
    let mut e = sample_episode(&w, &vocab, &LangConfig::default(), 1, (1, 2)).unwrap();
    e.start = 0;
    e.target = 4;
    e.gt_trajectory = vec![0, 2, 4];
    let p = model(&vocab, false, 9);
    let base = run_base(&p, &w, &e, 20).unwrap();
    let probs = &base.steps[0].probs;
    let mut sorted = probs.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let gap = sorted[0] - sorted[1];
    // A threshold just above the junction's gap, still moderate.
    let eps = (gap + 0.05).min(0.9);
    assert!(gap < eps);
    let t = run_mc(&p, &w, &e, MCConfig::new(eps).unwrap(), &opts()).unwrap();
    assert!(t.steps[0].is_ask);
    let acts = w.navigable_actions(0).unwrap();
    assert_eq!(t.steps[0].executed, Some(acts.index_of(2).unwrap()));
    assert_eq!(t.path[1], 2);
}
