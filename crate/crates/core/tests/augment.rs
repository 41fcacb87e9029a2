use std::collections::BTreeSet;

use askroute::augment::{
    collect_interactions, data_efficiency_curve, finetune, pre_exploration_data, split, teach_size, AugmentedSet,
    FinetuneConfig, FinetuneMode, Provenance, SplitMode,
};
use askroute::data::{sample_episodes, WorldSet};
use askroute::eval::{evaluate, EvalPlan};
use askroute::interact::{run_base, AgentKind};
use askroute::lang::{InstructionSource, LangConfig, Vocabulary};
use askroute::policy::{ModelConfig, ModelParams, CRITIC_PARAMS};
use askroute::trainer::TrainConfig;
use askroute::world::{generate_world, Episode, WorldConfig};

fn setup() -> (WorldSet, Vocabulary, Vec<Episode>) {
    let wc = WorldConfig {
        num_viewpoints: 30,
        vis_dim: 4,
        landmark_classes: 6,
        ..WorldConfig::default()
    };
    let mut worlds = WorldSet::new();
    worlds.insert(generate_world(&wc, 61).unwrap());
    worlds.insert(generate_world(&wc, 62).unwrap());
    let vocab = Vocabulary::new(6);
    let eps = sample_episodes(&worlds, &vocab, &LangConfig::default(), 60, (2, 5), 8).unwrap();
    (worlds, vocab, eps)
}

fn model(vocab: &Vocabulary, ask: bool) -> ModelParams {
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        word_dim: 6,
        vis_dim: 4,
        hidden: 8,
        ask_enabled: ask,
        init_scale: 1.0,
    };
    ModelParams::init(&cfg, 21).unwrap()
}

fn trajectories(eps: &[Episode]) -> BTreeSet<(u64, Vec<usize>)> {
    eps.iter().map(|e| (e.world_seed, e.gt_trajectory.clone())).collect()
}

fn small_finetune(mode: FinetuneMode, epochs: f64) -> FinetuneConfig {
    FinetuneConfig {
        mode,
        epochs,
        train: TrainConfig {
            batch_size: 4,
            val_episodes: 0,
            seed: 3,
            ..TrainConfig::default()
        },
        keep_truncated: false,
    }
}

#[test]
fn teaching_share_follows_ratio() {
    assert_eq!(teach_size(2349), 1500);
    assert_eq!(teach_size(830), 530);
}

#[test]
fn disjoint_split_shares_no_trajectory() {
    let (_, _, eps) = setup();
    // Give many trajectories a second instruction so sharing is possible.
    let mut doubled = eps.clone();
    for e in &eps[..30] {
        let mut d = e.clone();
        d.episode_seed ^= 0xABCD;
        doubled.push(d);
    }
    let s = split(&doubled, SplitMode::Disjoint, 4).unwrap();
    assert!(trajectories(&s.t_a).is_disjoint(&trajectories(&s.t_b)));
    assert_eq!(s.t_a.len() + s.t_b.len(), doubled.len());

    let shared = (0..20u64).any(|seed| {
        let r = split(&doubled, SplitMode::Random, seed).unwrap();
        assert_eq!(r.t_a.len(), teach_size(doubled.len()));
        !trajectories(&r.t_a).is_disjoint(&trajectories(&r.t_b))
    });
    assert!(shared, "random split should share some trajectories");

    let same = vec![eps[0].clone(); 5];
    assert!(split(&same, SplitMode::Disjoint, 0).is_err());
}

#[test]
fn collected_items_keep_real_instructions() {
    let (worlds, vocab, eps) = setup();
    let p = model(&vocab, true);
    let set = collect_interactions(&p, &worlds, &eps, AgentKind::Asa, 0.5, 20).unwrap();
    assert_eq!(set.len(), eps.len());
    for (it, e) in set.items.iter().zip(&eps) {
        assert_eq!(it.provenance, Provenance::HumanGuided);
        assert_eq!(it.token_ids, e.instruction.token_ids);
        assert_eq!(it.instruction_source, e.instruction.source);
        assert_eq!(it.path[0], e.start);
    }
    set.validate(&worlds).unwrap();
    assert!(collect_interactions(&p.with_ask(false), &worlds, &eps, AgentKind::Asa, 0.5, 20).is_err());
}

#[test]
fn never_asking_collector_stores_base_trajectories() {
    let (worlds, vocab, eps) = setup();
    let p = model(&vocab, false);
    let set = collect_interactions(&p, &worlds, &eps, AgentKind::Base, 0.5, 20).unwrap();
    for (it, e) in set.items.iter().zip(&eps) {
        let t = run_base(&p, worlds.get(e.world_seed).unwrap(), e, 20).unwrap();
        assert_eq!(it.path, t.path);
        assert_eq!(it.truncated, t.truncated);
    }
}

#[test]
fn all_ask_collector_stores_shortest_paths() {
    let (worlds, vocab, eps) = setup();
    let p = model(&vocab, false);
    let set = collect_interactions(&p, &worlds, &eps, AgentKind::Mc, 1.0 - 1e-9, 20).unwrap();
    for (it, e) in set.items.iter().zip(&eps) {
        let w = worlds.get(e.world_seed).unwrap();
        assert_eq!(*it.path.last().unwrap(), e.target);
        assert_eq!(it.path.len() - 1, w.hop_count(e.start, e.target).unwrap());
        assert!(!it.truncated);
        assert_eq!(it.actions.len(), it.path.len());
    }
}

#[test]
fn pre_exploration_items_are_shortest_paths_from_the_speaker() {
    let (worlds, vocab, _) = setup();
    let a = pre_exploration_data(&worlds, &vocab, &LangConfig::default(), 50, (2, 5), 12).unwrap();
    let b = pre_exploration_data(&worlds, &vocab, &LangConfig::default(), 50, (2, 5), 12).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 50);
    for it in &a.items {
        let w = worlds.get(it.world_seed).unwrap();
        assert_eq!(it.provenance, Provenance::PreExploration);
        assert_eq!(it.instruction_source, InstructionSource::Augmented);
        assert_eq!(*it.path.last().unwrap(), it.target);
        assert_eq!(it.path.len() - 1, w.hop_count(it.path[0], it.target).unwrap());
    }
    a.validate(&worlds).unwrap();
    assert!(pre_exploration_data(&worlds, &vocab, &LangConfig::default(), 0, (2, 5), 12).is_err());
}

#[test]
fn augmented_set_file_round_trip() {
    let (worlds, vocab, eps) = setup();
    let p = model(&vocab, true);
    let set = collect_interactions(&p, &worlds, &eps[..10], AgentKind::Asa, 0.5, 20).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.jsonl");
    set.save(&path).unwrap();
    assert_eq!(AugmentedSet::load(&path).unwrap(), set);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 10);
}

#[test]
fn zero_budget_leaves_model_unchanged() {
    let (worlds, vocab, _) = setup();
    let p = model(&vocab, true);
    let pre = pre_exploration_data(&worlds, &vocab, &LangConfig::default(), 10, (2, 5), 1).unwrap();
    let out = finetune(&p, &worlds, &pre, &small_finetune(FinetuneMode::Mixed, 0.0)).unwrap();
    assert_eq!(out.store, p.store);
    assert!(!out.ask_enabled());
    assert!(finetune(&p, &worlds, &AugmentedSet::default(), &small_finetune(FinetuneMode::Mixed, 1.0)).is_err());
}

#[test]
fn supervised_finetune_leaves_critic_alone() {
    let (worlds, vocab, _) = setup();
    let p = model(&vocab, false);
    let pre = pre_exploration_data(&worlds, &vocab, &LangConfig::default(), 16, (2, 5), 1).unwrap();
    let out = finetune(&p, &worlds, &pre, &small_finetune(FinetuneMode::Supervised, 1.0)).unwrap();
    for name in CRITIC_PARAMS {
        assert_eq!(out.store.get(name), p.store.get(name), "{name}");
    }
    assert_ne!(out.store.get("embedding"), p.store.get("embedding"));

    let mixed = finetune(&p, &worlds, &pre, &small_finetune(FinetuneMode::Mixed, 1.0)).unwrap();
    assert_ne!(mixed.store.get("critic_w"), p.store.get("critic_w"));
}

#[test]
fn curve_starts_at_base_success_rate() {
    let (worlds, vocab, eps) = setup();
    let p = model(&vocab, true);
    let human = collect_interactions(&p, &worlds, &eps[..20], AgentKind::Asa, 0.5, 20).unwrap();
    let pre = pre_exploration_data(&worlds, &vocab, &LangConfig::default(), 20, (2, 5), 2).unwrap();
    let cfg = small_finetune(FinetuneMode::Supervised, 1.0);
    let usable = human.take_usable(100).len().min(4);
    let pts = data_efficiency_curve(&p, &worlds, &human, &pre, &eps[20..], &[0, usable], &cfg).unwrap();
    let base = evaluate(&p.with_ask(false), &worlds, &eps[20..], &EvalPlan::base(cfg.train.max_steps))
        .unwrap()
        .1
        .success_rate;
    assert_eq!(pts[0].human_sr, base);
    assert_eq!(pts[0].preexp_sr, base);
    assert_eq!(pts[1].size, usable);
    assert!(data_efficiency_curve(&p, &worlds, &human, &pre, &eps[20..], &[10_000], &cfg).is_err());
}
