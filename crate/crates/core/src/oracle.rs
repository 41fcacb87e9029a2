//! Simulated user answering "where next?" with the shortest-path move,
//! sometimes wrong in a geometrically plausible way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::wrapped_turn;
use crate::seed;
use crate::world::{ActionSet, WorldGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Probability that an answer is distorted.
    pub noise_c: f64,
    /// Softmax temperature over negative angular differences.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            noise_c: 0.0,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn perfect() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_c) {
            return Err(Error::Config(format!("noise_c {} outside [0, 1]", self.noise_c)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("oracle temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub action_index: usize,
    pub was_distorted: bool,
    pub truth_index: usize,
}

/// Shortest-path action: stop at the target, otherwise the move onto the
/// next viewpoint of the shortest path.
pub fn teacher_action(
    world: &WorldGraph,
    current: usize,
    target: usize,
    actions: &ActionSet,
) -> Result<usize> {
    if current == target {
        return Ok(actions.stop_index());
    }
    let next = world.next_hop(current, target)?;
    actions.index_of(next).ok_or_else(|| {
        Error::Data(format!(
            "shortest-path successor {next} of {current} is not among the navigable moves"
        ))
    })
}

/// Probability of each action index being returned given that the answer
/// is distorted. Zero for the truth. If the truth is a move, stop is
/// excluded and the moves are weighted by `softmax(-|Δθ|/T)` with `Δθ`
/// wrapped into `[0, π]`. If the truth is stop, moves are uniform. Empty
/// when no alternative exists.
pub fn distortion_distribution(actions: &ActionSet, truth: usize, temperature: f64) -> Vec<f64> {
    let m = actions.len();
    let stop = actions.stop_index();
    let mut w = vec![0.0; m];
    if truth == stop {
        let n = actions.moves.len();
        if n == 0 {
            return Vec::new();
        }
        for x in w.iter_mut().take(n) {
            *x = 1.0 / n as f64;
        }
        return w;
    }
    let theta = actions.moves[truth].heading;
    let mut z = 0.0;
    for (i, mv) in actions.moves.iter().enumerate() {
        if i != truth {
            let d = wrapped_turn(theta, mv.heading).abs();
            w[i] = (-d / temperature).exp();
            z += w[i];
        }
    }
    if z == 0.0 {
        return Vec::new();
    }
    w.iter_mut().for_each(|x| *x /= z);
    w
}

/// Answers a question: the truth with probability `1 - C`, otherwise a
/// different action drawn from [`distortion_distribution`].
pub fn respond(
    world: &WorldGraph,
    current: usize,
    target: usize,
    actions: &ActionSet,
    config: &OracleConfig,
    rng: &mut impl Rng,
) -> Result<OracleAnswer> {
    let truth = teacher_action(world, current, target, actions)?;
    let honest = OracleAnswer {
        action_index: truth,
        was_distorted: false,
        truth_index: truth,
    };
    // Draw once per query even at C = 0 so the stream does not depend on C.
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    if u >= config.noise_c {
        return Ok(honest);
    }
    let dist = distortion_distribution(actions, truth, config.temperature);
    if dist.is_empty() {
        return Ok(honest);
    }
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            pick = Some(i);
            if v < acc {
                break;
            }
        }
    }
    let action_index = pick.expect("non-empty distortion distribution");
    Ok(OracleAnswer {
        action_index,
        was_distorted: true,
        truth_index: truth,
    })
}

/// Oracle with its own random stream for one episode.
pub struct Oracle {
    pub config: OracleConfig,
    rng: ChaCha8Rng,
}

impl Oracle {
    pub fn for_episode(config: &OracleConfig, episode_seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed::derive(config.seed, episode_seed)),
        })
    }

    pub fn answer(
        &mut self,
        world: &WorldGraph,
        current: usize,
        target: usize,
        actions: &ActionSet,
    ) -> Result<OracleAnswer> {
        respond(world, current, target, actions, &self.config, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, Layout, WorldConfig};

    fn line() -> WorldGraph {
        let cfg = WorldConfig {
            num_viewpoints: 4,
            layout: Layout::Line,
            ..WorldConfig::default()
        };
        generate_world(&cfg, 7).unwrap()
    }

    #[test]
    fn teacher_on_line() {
        let w = line();
        let acts = w.navigable_actions(0).unwrap();
        assert_eq!(teacher_action(&w, 0, 0, &acts).unwrap(), acts.stop_index());
        let k = teacher_action(&w, 0, 2, &acts).unwrap();
        assert_eq!(acts.moves[k].dest, 1);
    }

    #[test]
    fn zero_noise_is_truth() {
        let w = line();
        let acts = w.navigable_actions(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = respond(&w, 1, 3, &acts, &OracleConfig::perfect(), &mut rng).unwrap();
            assert!(!a.was_distorted);
            assert_eq!(a.action_index, a.truth_index);
        }
    }

    #[test]
    fn single_move_cannot_be_distorted() {
        let w = line();
        let acts = w.navigable_actions(0).unwrap();
        let cfg = OracleConfig {
            noise_c: 1.0,
            ..OracleConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = respond(&w, 0, 3, &acts, &cfg, &mut rng).unwrap();
        assert!(!a.was_distorted);
    }

    #[test]
    fn stop_truth_distorts_uniformly_over_moves() {
        let w = line();
        let acts = w.navigable_actions(1).unwrap();
        let d = distortion_distribution(&acts, acts.stop_index(), 1.0);
        assert_eq!(d, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn bad_noise_rejected() {
        let cfg = OracleConfig {
            noise_c: 1.5,
            ..OracleConfig::default()
        };
        assert!(Oracle::for_episode(&cfg, 0).is_err());
    }
}
