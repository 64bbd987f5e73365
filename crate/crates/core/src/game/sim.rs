//! Episode simulation.

use rand::Rng;

use super::TreeGame;
use crate::policy::ProductPolicy;

/// What one player sees at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub infoset: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Visited state index on each layer.
    pub states: Vec<usize>,
    /// `views[i][h]` is player `i`'s observation on layer `h`.
    pub views: Vec<Vec<Step>>,
}

impl Trajectory {
    pub fn total_reward(&self, player: usize) -> f64 {
        self.views[player].iter().map(|s| s.reward).sum()
    }
}

/// Draws an index with probability proportional to `weights`.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = k;
        if u < w {
            return k;
        }
        u -= w;
    }
    last
}

/// Samples one episode with every player following `profile`.
pub fn play_episode<R: Rng + ?Sized>(game: &TreeGame, profile: &ProductPolicy, rng: &mut R) -> Trajectory {
    run_episode(game, rng, |_, i, x, rng| sample_index(profile.player(i).row(x), rng))
}

/// Samples one episode where `choose(h, player, infoset, rng)` picks each
/// player's action; players are queried in index order on every layer.
pub(crate) fn run_episode<R, F>(game: &TreeGame, rng: &mut R, mut choose: F) -> Trajectory
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize, usize, &mut R) -> usize,
{
    let m = game.num_players();
    let mut states = Vec::with_capacity(game.horizon());
    let mut views: Vec<Vec<Step>> = vec![Vec::with_capacity(game.horizon()); m];
    let mut s = sample_index(game.initial(), rng);
    let mut actions = vec![0; m];
    for h in 0..game.horizon() {
        states.push(s);
        let node = game.state(h, s);
        for (i, act) in actions.iter_mut().enumerate() {
            *act = choose(h, i, node.infosets[i], rng);
        }
        let joint = game.joint_index(&actions);
        for i in 0..m {
            views[i].push(Step {
                infoset: node.infosets[i],
                action: actions[i],
                reward: game.reward(h, s, joint, i),
            });
        }
        if h + 1 < game.horizon() {
            let dist = &node.next[joint];
            let probs: Vec<f64> = dist.iter().map(|&(_, p)| p).collect();
            s = dist[sample_index(&probs, rng)].0;
        }
    }
    Trajectory { states, views }
}
