#![allow(dead_code)]

use askroute::diff::{check_gradients, Tape, Tensor, Var};
use askroute::lang::{LangConfig, Vocabulary};
use askroute::policy::{bind, Bound, ModelConfig, ModelParams};
use askroute::trainer::{build_episode_loss, EpisodePlan, Picker, TrainConfig};
use askroute::world::{generate_world, sample_episode, Layout, WorldConfig};

pub fn tiny_config(vocab: &Vocabulary, ask: bool) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        word_dim: 4,
        vis_dim: 4,
        hidden: 8,
        ask_enabled: ask,
        init_scale: 1.0,
    }
}

pub fn bound_from(vars: &[Var], cfg: &ModelConfig, detach: bool) -> Bound {
    Bound {
        vars: vars.to_vec(),
        hidden: cfg.hidden,
        feature_dim: cfg.feature_dim(),
        ask_enabled: cfg.ask_enabled,
        detach_critic: detach,
    }
}

/// End-to-end imitation plus actor-critic objective on a two-decision
/// episode in a six-viewpoint line world at H=8. Advantages are replayed
/// from the reference pass so the stop-gradient is a constant under
/// perturbation. Returns the worst relative error with the ask action
/// disabled (move then stop) and enabled (ask then stop).
pub fn two_step_gradcheck() -> (f64, f64) {
    let cfg_w = WorldConfig {
        num_viewpoints: 6,
        layout: Layout::Line,
        vis_dim: 4,
        landmark_classes: 6,
        ..WorldConfig::default()
    };
    let w = generate_world(&cfg_w, 5).unwrap();
    let vocab = Vocabulary::new(6);
    let ep = sample_episode(&w, &vocab, &LangConfig::default(), 2, (1, 1)).unwrap();
    let acts = w.navigable_actions(ep.start).unwrap();
    let to_target = acts.index_of(ep.target).unwrap();
    // A line end has one move, so stop sits at index 1 there.
    let stop_at_target = w.navigable_actions(ep.target).unwrap().stop_index();

    let run = |ask: bool, choices: Vec<usize>| -> f64 {
        let cfg = tiny_config(&vocab, ask);
        let store = ModelParams::init(&cfg, 11).unwrap().store.cast::<f64>();
        let train = TrainConfig {
            detach_critic: false,
            r_ask: 0.3,
            ..TrainConfig::default()
        };
        let mut tape = Tape::<f64>::new();
        let b = bind(&mut tape, &cfg, &store).unwrap();
        let plan = EpisodePlan {
            episode: &ep,
            il_path: &ep.gt_trajectory,
            frozen_advantages: None,
        };
        let mut picker = Picker::Replay(choices.clone());
        let g = build_episode_loss(&mut tape, &cfg, &b, &w, &plan, &train, &mut picker).unwrap();
        assert_eq!(g.choices.len(), 2);
        assert!(g.breakdown.rl != 0.0 && g.breakdown.critic > 0.0);
        let advantages = g.advantages.clone();

        let params: Vec<Tensor<f64>> = store.tensors().to_vec();
        check_gradients(
            |tape, vars| {
                let b = bound_from(vars, &cfg, false);
                let plan = EpisodePlan {
                    episode: &ep,
                    il_path: &ep.gt_trajectory,
                    frozen_advantages: Some(&advantages),
                };
                let mut picker = Picker::Replay(choices.clone());
                Ok(build_episode_loss(tape, &cfg, &b, &w, &plan, &train, &mut picker)?.root)
            },
            &params,
            1e-4,
        )
        .unwrap()
        .max_rel_error
    };
    let plain = run(false, vec![to_target, stop_at_target]);
    let ask = run(true, vec![acts.len(), stop_at_target]);
    (plain, ask)
}
