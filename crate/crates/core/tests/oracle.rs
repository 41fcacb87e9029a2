use std::f64::consts::PI;

use askroute::oracle::{distortion_distribution, respond, teacher_action, Oracle, OracleConfig};
use askroute::world::{generate_world, WorldConfig, WorldGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hub at the origin with spokes at the given bearings, 3 m out.
fn star(bearings: &[f64]) -> WorldGraph {
    let mut positions = vec![[0.0, 0.0, 0.0]];
    let mut edges = Vec::new();
    for (i, &b) in bearings.iter().enumerate() {
        positions.push([3.0 * b.cos(), 3.0 * b.sin(), 0.0]);
        edges.push((0, i + 1));
    }
    let n = positions.len();
    WorldGraph::from_layout(&WorldConfig::default(), 1, positions, (0..n).collect(), &edges).unwrap()
}

fn index_of_dest(w: &WorldGraph, dest: usize) -> usize {
    w.navigable_actions(0).unwrap().index_of(dest).unwrap()
}

#[test]
fn closer_alternative_has_softmax_probability() {
    // Truth toward spoke 1 (bearing 0); alternatives at π/4 and π.
    let w = star(&[0.0, PI / 4.0, PI]);
    let acts = w.navigable_actions(0).unwrap();
    let truth = teacher_action(&w, 0, 1, &acts).unwrap();
    assert_eq!(truth, index_of_dest(&w, 1));
    let dist = distortion_distribution(&acts, truth, 1.0);
    let near = index_of_dest(&w, 2);
    let far = index_of_dest(&w, 3);
    let expect = (-PI / 4.0).exp() / ((-PI / 4.0).exp() + (-PI).exp());
    assert!((dist[near] - expect).abs() < 1e-12);
    // Hand evaluation: e^{-π/4} = 0.455938, e^{-π} = 0.043214.
    assert!((expect - 0.455938 / (0.455938 + 0.043214)).abs() < 1e-5);
    assert_eq!(dist[truth], 0.0);
    assert_eq!(dist[acts.stop_index()], 0.0);

    let cfg = OracleConfig {
        noise_c: 1.0,
        ..OracleConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let mut near_count = 0;
    for _ in 0..n {
        let a = respond(&w, 0, 1, &acts, &cfg, &mut rng).unwrap();
        assert!(a.was_distorted);
        assert_ne!(a.action_index, truth);
        assert!(a.action_index == near || a.action_index == far);
        near_count += (a.action_index == near) as usize;
    }
    let freq = near_count as f64 / n as f64;
    assert!((freq - expect).abs() < 0.01, "near frequency {freq}");
}

#[test]
fn distortion_rate_and_chi_square() {
    // Five alternatives at assorted bearings around the truth.
    let bearings = [0.0, 0.5, -0.9, 1.7, 2.8, -2.2];
    let w = star(&bearings);
    let acts = w.navigable_actions(0).unwrap();
    let truth = index_of_dest(&w, 1);
    let cfg = OracleConfig {
        noise_c: 0.3,
        ..OracleConfig::default()
    };
    let probs = distortion_distribution(&acts, truth, cfg.temperature);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let mut counts = vec![0usize; acts.len()];
    let mut distorted = 0usize;
    for _ in 0..n {
        let a = respond(&w, 0, 1, &acts, &cfg, &mut rng).unwrap();
        if a.was_distorted {
            distorted += 1;
            counts[a.action_index] += 1;
        } else {
            assert_eq!(a.action_index, truth);
        }
    }
    let rate = distorted as f64 / n as f64;
    assert!((rate - 0.3).abs() < 0.01, "distortion rate {rate}");

    let mut chi2 = 0.0;
    let mut cells = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            let e = p * distorted as f64;
            chi2 += (counts[i] as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            assert_eq!(counts[i], 0);
        }
    }
    assert_eq!(cells, 5);
    // Upper 1% point of chi-square with 4 degrees of freedom.
    assert!(chi2 < 13.277, "chi-square {chi2}");
}

#[test]
fn closer_angles_never_less_likely() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let k = rng.gen_range(2..7);
        let bearings: Vec<f64> = (0..k).map(|i| i as f64 * 2.0 * PI / k as f64 + rng.gen_range(-0.3..0.3)).collect();
        let w = star(&bearings);
        let acts = w.navigable_actions(0).unwrap();
        let truth = rng.gen_range(0..acts.moves.len());
        let probs = distortion_distribution(&acts, truth, 1.0);
        let th = acts.moves[truth].heading;
        let ang = |i: usize| {
            let d = (acts.moves[i].heading - th).rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d)
        };
        for i in 0..acts.moves.len() {
            for j in 0..acts.moves.len() {
                if i != truth && j != truth && ang(i) < ang(j) {
                    assert!(probs[i] >= probs[j]);
                }
            }
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn stop_truth_distorts_uniformly_over_moves() {
    let w = star(&[0.0, 1.0, 2.0]);
    let acts = w.navigable_actions(0).unwrap();
    let probs = distortion_distribution(&acts, acts.stop_index(), 1.0);
    for p in &probs[..3] {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(probs[3], 0.0);
}

#[test]
fn single_move_cannot_be_distorted() {
    let w = star(&[0.0]);
    let acts = w.navigable_actions(1).unwrap();
    let cfg = OracleConfig {
        noise_c: 1.0,
        ..OracleConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = respond(&w, 1, 0, &acts, &cfg, &mut rng).unwrap();
    assert!(!a.was_distorted);
    assert_eq!(a.action_index, a.truth_index);
}

#[test]
fn perfect_oracle_equals_teacher_everywhere() {
    let w = generate_world(&WorldConfig::default(), 5).unwrap();
    let mut o = Oracle::for_episode(&OracleConfig::perfect(), 9).unwrap();
    for cur in (0..w.len()).step_by(7) {
        let acts = w.navigable_actions(cur).unwrap();
        for t in (0..w.len()).step_by(11) {
            let a = o.answer(&w, cur, t, &acts).unwrap();
            assert_eq!(a.action_index, teacher_action(&w, cur, t, &acts).unwrap());
            assert!(!a.was_distorted);
        }
    }
}

#[test]
fn following_teacher_takes_shortest_edge_count() {
    let w = generate_world(&WorldConfig::default(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (s, t) = (rng.gen_range(0..w.len()), rng.gen_range(0..w.len()));
        let mut cur = s;
        let mut steps = 0;
        loop {
            let acts = w.navigable_actions(cur).unwrap();
            let k = teacher_action(&w, cur, t, &acts).unwrap();
            if k == acts.stop_index() {
                break;
            }
            cur = acts.moves[k].dest;
            steps += 1;
            assert!(steps <= w.len());
        }
        assert_eq!(cur, t);
        assert_eq!(steps, w.hop_count(s, t).unwrap());
    }
}

#[test]
fn invalid_noise_rejected() {
    let c = OracleConfig {
        noise_c: 1.5,
        ..OracleConfig::default()
    };
    assert!(Oracle::for_episode(&c, 0).is_err());
}
