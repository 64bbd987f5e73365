//! Exact evaluation by forward/backward passes over the tree.

use super::TreeGame;
use crate::policy::{BehavioralPolicy, ProductPolicy};

/// Sequence-form probability of playing `a` at `x` together with the
/// ancestor actions on layers `from..layer(x)`. `from = 0` gives the full
/// product along the path.
pub fn sequence_form_range(game: &TreeGame, pi: &BehavioralPolicy, x: usize, a: usize, from: usize) -> f64 {
    let info = game.infoset(pi.player(), x);
    let mut p = pi.prob(x, a);
    for &(y, b) in &info.history[from.min(info.layer)..] {
        p *= pi.prob(y, b);
    }
    p
}

/// Full sequence-form probability of `(x, a)`.
pub fn sequence_form(game: &TreeGame, pi: &BehavioralPolicy, x: usize, a: usize) -> f64 {
    sequence_form_range(game, pi, x, a, 0)
}

/// Probability that everyone except `exclude` plays the joint action at state `(h, s)`.
pub(crate) fn others_prob(game: &TreeGame, profile: &ProductPolicy, h: usize, s: usize, joint: usize, exclude: Option<usize>) -> f64 {
    let node = game.state(h, s);
    let acts = game.joint_actions(joint);
    let mut q = 1.0;
    for (j, &a) in acts.iter().enumerate() {
        if Some(j) != exclude {
            q *= profile.player(j).prob(node.infosets[j], a);
        }
    }
    q
}

fn reach_excluding(game: &TreeGame, profile: &ProductPolicy, exclude: Option<usize>) -> Vec<Vec<f64>> {
    let mut reach: Vec<Vec<f64>> = (0..game.horizon()).map(|h| vec![0.0; game.layer(h).len()]).collect();
    reach[0].copy_from_slice(game.initial());
    for h in 0..game.horizon() - 1 {
        for s in 0..game.layer(h).len() {
            let w = reach[h][s];
            if w == 0.0 {
                continue;
            }
            for joint in 0..game.num_joint() {
                let q = w * others_prob(game, profile, h, s, joint, exclude);
                if q == 0.0 {
                    continue;
                }
                for &(c, p) in &game.state(h, s).next[joint] {
                    reach[h + 1][c] += q * p;
                }
            }
        }
    }
    reach
}

/// Probability of visiting each state, `reach[h][s]`.
pub fn state_reach(game: &TreeGame, profile: &ProductPolicy) -> Vec<Vec<f64>> {
    reach_excluding(game, profile, None)
}

/// Reach of each state with player `i`'s own action probabilities left out:
/// chance and opponents only.
pub fn opponent_reach(game: &TreeGame, profile: &ProductPolicy, player: usize) -> Vec<Vec<f64>> {
    reach_excluding(game, profile, Some(player))
}

/// Marginal reach of every infoset of `player` under the opponents' policies.
/// Player `player`'s entry of `profile` is ignored.
pub fn marginal_reach_all(game: &TreeGame, profile: &ProductPolicy, player: usize) -> Vec<f64> {
    let reach = opponent_reach(game, profile, player);
    game.infosets(player)
        .iter()
        .map(|info| info.states.iter().map(|&s| reach[info.layer][s]).sum())
        .collect()
}

pub fn marginal_reach(game: &TreeGame, profile: &ProductPolicy, player: usize, x: usize) -> f64 {
    let reach = opponent_reach(game, profile, player);
    let info = game.infoset(player, x);
    info.states.iter().map(|&s| reach[info.layer][s]).sum()
}

/// Expected cumulative reward of `player`.
pub fn value(game: &TreeGame, profile: &ProductPolicy, player: usize) -> f64 {
    let reach = state_reach(game, profile);
    let mut total = 0.0;
    for h in 0..game.horizon() {
        for s in 0..game.layer(h).len() {
            let w = reach[h][s];
            if w == 0.0 {
                continue;
            }
            for joint in 0..game.num_joint() {
                let q = others_prob(game, profile, h, s, joint, None);
                if q != 0.0 {
                    total += w * q * game.reward(h, s, joint, player);
                }
            }
        }
    }
    total
}

/// Expected immediate reward of `player` at each `(x, a)`, weighted by chance
/// and opponents only; indexed by `x * A + a`. The value of any policy `σ` of
/// `player` against `profile` is `Σ σ_{1:h}(x, a) · table[x, a]`.
pub fn immediate_rewards(game: &TreeGame, profile: &ProductPolicy, player: usize) -> Vec<f64> {
    let a_n = game.num_actions(player);
    let reach = opponent_reach(game, profile, player);
    let mut out = vec![0.0; game.num_infosets(player) * a_n];
    for h in 0..game.horizon() {
        for s in 0..game.layer(h).len() {
            let w = reach[h][s];
            if w == 0.0 {
                continue;
            }
            let x = game.state(h, s).infosets[player];
            for joint in 0..game.num_joint() {
                let q = others_prob(game, profile, h, s, joint, Some(player));
                if q != 0.0 {
                    let a = game.joint_actions(joint)[player];
                    out[x * a_n + a] += w * q * game.reward(h, s, joint, player);
                }
            }
        }
    }
    out
}

/// Immediate (`ℓ`) and cumulative (`L`) counterfactual losses of one player,
/// indexed by `x * A + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub player: usize,
    pub num_actions: usize,
    pub immediate: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl LossTable {
    pub fn immediate(&self, x: usize, a: usize) -> f64 {
        self.immediate[x * self.num_actions + a]
    }

    pub fn cumulative(&self, x: usize, a: usize) -> f64 {
        self.cumulative[x * self.num_actions + a]
    }

    pub fn cumulative_row(&self, x: usize) -> &[f64] {
        &self.cumulative[x * self.num_actions..(x + 1) * self.num_actions]
    }
}

/// Counterfactual losses of `player` under `profile`. The immediate loss at
/// `(x, a)` weighs `1 - r` by chance and opponents only; the cumulative loss
/// adds the player's own continuation below `(x, a)`.
pub fn counterfactual_losses(game: &TreeGame, profile: &ProductPolicy, player: usize) -> LossTable {
    let a_n = game.num_actions(player);
    let reach = opponent_reach(game, profile, player);
    let n_x = game.num_infosets(player);
    let mut immediate = vec![0.0; n_x * a_n];
    for h in 0..game.horizon() {
        for s in 0..game.layer(h).len() {
            let w = reach[h][s];
            if w == 0.0 {
                continue;
            }
            let x = game.state(h, s).infosets[player];
            for joint in 0..game.num_joint() {
                let q = others_prob(game, profile, h, s, joint, Some(player));
                if q == 0.0 {
                    continue;
                }
                let a = game.joint_actions(joint)[player];
                immediate[x * a_n + a] += w * q * (1.0 - game.reward(h, s, joint, player));
            }
        }
    }
    let pi = profile.player(player);
    let mut cumulative = immediate.clone();
    for x in (0..n_x).rev() {
        for a in 0..a_n {
            let mut cont = 0.0;
            for &c in &game.infoset(player, x).children[a] {
                for b in 0..a_n {
                    cont += pi.prob(c, b) * cumulative[c * a_n + b];
                }
            }
            cumulative[x * a_n + a] += cont;
        }
    }
    LossTable { player, num_actions: a_n, immediate, cumulative }
}
