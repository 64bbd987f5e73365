//! Built-in games: the K-containment family, the normal-form separation
//! example, Kuhn poker, and seeded random trees.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{joint_key, GameError, GameSpec, Label, NextSpec, StateSpec, TreeGame};
use crate::policy::{BehavioralPolicy, CorrelatedPolicy, PolicyError, ProductPolicy};

/// Largest `K` accepted by [`containment_game`]; the last layer has `4^{K+1}` states.
pub const MAX_CONTAINMENT_K: usize = 4;
/// Largest total state count accepted by [`random_game`].
pub const MAX_RANDOM_STATES: usize = 200_000;

/// Kuhn chips `c ∈ [-2, 2]` map to rewards `(2 + c) / 4` for the first
/// player and `(2 - c) / 4` for the second.
pub const KUHN_CHIP_SCALE: f64 = 0.25;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("size guard: {0}")]
    SizeGuard(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn state(infoset: Vec<String>) -> StateSpec {
    StateSpec { infoset: infoset.into_iter().map(Label::from).collect(), rewards: BTreeMap::new(), next: BTreeMap::new() }
}

/// Pure product policy where player `p` plays `choose(p, h, s)` at the infoset of state `(h, s)`.
fn pure_profile(game: &TreeGame, choose: impl Fn(usize, usize, usize) -> usize) -> ProductPolicy {
    let policies = (0..game.num_players())
        .map(|p| {
            let mut acts = vec![0; game.num_infosets(p)];
            for h in 0..game.horizon() {
                for s in 0..game.layer(h).len() {
                    acts[game.state(h, s).infosets[p]] = choose(p, h, s);
                }
            }
            BehavioralPolicy::pure(game, p, &acts)
        })
        .collect();
    ProductPolicy::new(policies)
}

/// The two-player perfect-information game with `K + 1` layers and two
/// actions each. The first player earns 1 at the end if its action differed
/// from the second player's on every layer, 1/2 if they matched on every
/// layer, and 0 otherwise. The second player earns nothing.
///
/// States on layer `h` are numbered by the joint-action history in base 4.
pub fn containment_game(k: usize) -> Result<TreeGame, GenError> {
    if k > MAX_CONTAINMENT_K {
        return Err(GenError::SizeGuard(format!("K = {k} > {MAX_CONTAINMENT_K}")));
    }
    let horizon = k + 1;
    let mut layers = Vec::with_capacity(horizon);
    // (all differ, all equal) along the history of each state.
    let mut flags = vec![(true, true)];
    for h in 0..horizon {
        let mut layer = Vec::with_capacity(flags.len());
        let mut next_flags = Vec::with_capacity(flags.len() * 4);
        for (s, &(differ, equal)) in flags.iter().enumerate() {
            let label = format!("{h}:{s}");
            let mut st = state(vec![label.clone(), label]);
            for b in 0..2 {
                for a in 0..2 {
                    let key = joint_key(&[a, b]);
                    let (d, e) = (differ && a != b, equal && a == b);
                    if h + 1 == horizon {
                        let r = if d { 1.0 } else if e { 0.5 } else { 0.0 };
                        if r > 0.0 {
                            st.rewards.insert(key, vec![r, 0.0]);
                        }
                    } else {
                        st.next.insert(key, NextSpec::State(s * 4 + a + 2 * b));
                    }
                }
            }
            for j in 0..4 {
                let (a, b) = (j % 2, j / 2);
                next_flags.push((differ && a != b, equal && a == b));
            }
            layer.push(st);
        }
        layers.push(layer);
        flags = next_flags;
    }
    Ok(TreeGame::from_spec(&GameSpec { players: 2, horizon, action_counts: vec![2, 2], initial: vec![1.0], states: layers })?)
}

/// The mirror mixture of the containment game in compact form: one fair
/// coin per layer, and both players play that layer's coin at every state.
/// Along any single path the recommendations have the same law as under the
/// uniform mixture over all mirrored pure policies, so every gap agrees.
pub fn containment_mixture(game: &TreeGame) -> Result<CorrelatedPolicy, GenError> {
    let horizon = game.horizon();
    let comps = (0..1usize << horizon).map(|coins| pure_profile(game, |_, h, _| (coins >> h) & 1)).collect();
    Ok(CorrelatedPolicy::uniform(comps)?)
}

/// The uniform mixture over every mirrored pure policy (both players take
/// the same action at each state). Only for `K ≤ 1`.
pub fn containment_full_mixture(game: &TreeGame) -> Result<CorrelatedPolicy, GenError> {
    let states: Vec<(usize, usize)> = (0..game.horizon()).flat_map(|h| (0..game.layer(h).len()).map(move |s| (h, s))).collect();
    if states.len() > 16 {
        return Err(GenError::SizeGuard(format!("2^{} mirrored policies", states.len())));
    }
    let pos: BTreeMap<(usize, usize), usize> = states.iter().enumerate().map(|(n, &hs)| (hs, n)).collect();
    let comps = (0..1usize << states.len())
        .map(|bits| pure_profile(game, |_, h, s| (bits >> pos[&(h, s)]) & 1))
        .collect();
    Ok(CorrelatedPolicy::uniform(comps)?)
}

/// Two-layer perfect-information game separating the normal-form and
/// extensive-form notions, with its 32-policy coupled mixture.
///
/// From the root, joint action `(a, b)` leads to state `2a + b`. The first
/// player earns 1/2 for action 0 at the root, and 1 on the states reached
/// by its action 1 whenever the second player then plays 0.
pub fn nfce_example() -> Result<(TreeGame, CorrelatedPolicy), GenError> {
    let mut root = state(vec!["s0".into(), "s0".into()]);
    for a in 0..2 {
        for b in 0..2 {
            let key = joint_key(&[a, b]);
            if a == 0 {
                root.rewards.insert(key.clone(), vec![0.5, 0.0]);
            }
            root.next.insert(key, NextSpec::State(2 * a + b));
        }
    }
    let mut second = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            let label = format!("s{}{}", i + 1, j + 1);
            let mut st = state(vec![label.clone(), label]);
            if i == 1 {
                for a in 0..2 {
                    st.rewards.insert(joint_key(&[a, 0]), vec![1.0, 0.0]);
                }
            }
            second.push(st);
        }
    }
    let game = TreeGame::from_spec(&GameSpec {
        players: 2,
        horizon: 2,
        action_counts: vec![2, 2],
        initial: vec![1.0],
        states: vec![vec![root], second],
    })?;
    let comps = (0..32usize)
        .map(|bits| pure_profile(&game, |_, h, s| (bits >> if h == 0 { 0 } else { 1 + s }) & 1))
        .collect();
    let mix = CorrelatedPolicy::uniform(comps)?;
    Ok((game, mix))
}

fn showdown(c1: usize, c2: usize, stake: f64) -> f64 {
    if c1 > c2 {
        stake
    } else {
        -stake
    }
}

fn kuhn_reward(chips: f64) -> Vec<f64> {
    vec![(2.0 + chips) * KUHN_CHIP_SCALE, (2.0 - chips) * KUHN_CHIP_SCALE]
}

/// Three-card Kuhn poker on three layers: the first player checks (0) or
/// bets (1); the second player checks/bets after a check or folds/calls
/// after a bet; after check-bet the first player folds (0) or calls (1).
/// The player not to move picks a dummy action that only it observes, and
/// both players keep acting on padding states once the hand is over. The
/// deal is the initial distribution over the six card permutations.
pub fn kuhn_poker() -> Result<TreeGame, GenError> {
    const CARDS: [&str; 3] = ["J", "Q", "K"];
    let deals: Vec<(usize, usize)> = (0..3).flat_map(|a| (0..3).filter(move |&b| b != a).map(move |b| (a, b))).collect();
    let mut l0 = Vec::new();
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    for &(c1, c2) in &deals {
        let (n1, n2) = (CARDS[c1], CARDS[c2]);
        let mut st0 = state(vec![n1.to_string(), n2.to_string()]);
        for d0 in 0..2 {
            for a in 0..2 {
                st0.next.insert(joint_key(&[a, d0]), NextSpec::State(l1.len()));
                let pa = if a == 0 { "c" } else { "b" };
                let mut st1 = state(vec![format!("{n1}{pa}"), format!("{n2}{pa}~{d0}")]);
                for b in 0..2 {
                    for d1 in 0..2 {
                        let key = joint_key(&[d1, b]);
                        let chips = match (a, b) {
                            (0, 0) => Some(showdown(c1, c2, 1.0)),
                            (1, 0) => Some(1.0),
                            (1, 1) => Some(showdown(c1, c2, 2.0)),
                            _ => None,
                        };
                        if let Some(c) = chips {
                            st1.rewards.insert(key.clone(), kuhn_reward(c));
                        }
                        st1.next.insert(key, NextSpec::State(l2.len()));
                        let pb = if b == 0 { "c" } else { "b" };
                        let mut st2 = state(vec![format!("{n1}{pa}~{d1}{pb}"), format!("{n2}{pa}~{d0}{pb}")]);
                        if a == 0 && b == 1 {
                            for call in 0..2 {
                                let chips = if call == 0 { -1.0 } else { showdown(c1, c2, 2.0) };
                                for d2 in 0..2 {
                                    st2.rewards.insert(joint_key(&[call, d2]), kuhn_reward(chips));
                                }
                            }
                        }
                        l2.push(st2);
                    }
                }
                l1.push(st1);
            }
        }
        l0.push(st0);
    }
    let initial = vec![1.0 / deals.len() as f64; deals.len()];
    Ok(TreeGame::from_spec(&GameSpec { players: 2, horizon: 3, action_counts: vec![2, 2], initial, states: vec![l0, l1, l2] })?)
}

/// Parameters of [`random_game`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomGameParams {
    pub players: usize,
    pub horizon: usize,
    pub actions: usize,
    /// Number of first-layer states.
    pub initial_states: usize,
    /// Each (state, joint action) leads to between 1 and this many states.
    pub max_branch: usize,
    /// Probability that a state joins an existing infoset of its group
    /// instead of opening a new one.
    pub merge_prob: f64,
}

impl Default for RandomGameParams {
    fn default() -> Self {
        RandomGameParams { players: 2, horizon: 2, actions: 2, initial_states: 2, max_branch: 1, merge_prob: 0.5 }
    }
}

/// A random tree with uniform rewards in `[0,1]`.
///
/// Each player's infosets on a layer group states by the player's own
/// previous infoset and action; within a group, states are merged at random.
/// This keeps perfect recall while hiding part of the opponents' play.
pub fn random_game(seed: u64, params: &RandomGameParams) -> Result<TreeGame, GenError> {
    let RandomGameParams { players: m, horizon, actions, initial_states, max_branch, merge_prob } = *params;
    if m == 0 || horizon == 0 || actions == 0 || initial_states == 0 || max_branch == 0 {
        return Err(GenError::SizeGuard("all sizes must be positive".into()));
    }
    let joint = actions.pow(m as u32);
    let mut per_layer = initial_states as f64;
    let mut total = per_layer;
    for _ in 1..horizon {
        per_layer *= (joint * max_branch) as f64;
        total += per_layer;
    }
    if total > MAX_RANDOM_STATES as f64 {
        return Err(GenError::SizeGuard(format!("up to {total} states")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut initial: Vec<f64> = (0..initial_states).map(|_| rng.random::<f64>() + 0.1).collect();
    let t: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= t);

    // Per state: its parent (state, joint) on the previous layer.
    let mut parents: Vec<Option<(usize, usize)>> = vec![None; initial_states];
    // Per state and player: infoset index within the layer.
    let mut prev_infosets: Vec<Vec<usize>> = Vec::new();
    let mut layers = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let n = parents.len();
        // Group by (parent infoset, own action), then coarsen.
        let mut infosets = vec![vec![0usize; m]; n];
        for p in 0..m {
            let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
            for (s, parent) in parents.iter().enumerate() {
                let key = match parent {
                    None => (0, 0),
                    Some((ps, j)) => (prev_infosets[*ps][p], (j / actions.pow(p as u32)) % actions),
                };
                groups.entry(key).or_default().push(s);
            }
            let mut next_id = 0;
            for members in groups.values() {
                let mut opened: Vec<usize> = Vec::new();
                let mut order = members.clone();
                order.shuffle(&mut rng);
                for &s in &order {
                    if !opened.is_empty() && rng.random::<f64>() < merge_prob {
                        infosets[s][p] = opened[rng.random_range(0..opened.len())];
                    } else {
                        infosets[s][p] = next_id;
                        opened.push(next_id);
                        next_id += 1;
                    }
                }
            }
        }
        let mut layer = Vec::with_capacity(n);
        let mut next_parents = Vec::new();
        for (s, ids) in infosets.iter().enumerate() {
            let labels = ids.iter().map(|x| format!("{h}:{x}")).collect();
            let mut st = state(labels);
            for j in 0..joint {
                let acts: Vec<usize> = (0..m).map(|p| (j / actions.pow(p as u32)) % actions).collect();
                let key = joint_key(&acts);
                st.rewards.insert(key.clone(), (0..m).map(|_| rng.random::<f64>()).collect());
                if h + 1 < horizon {
                    let k = rng.random_range(1..=max_branch);
                    let mut w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
                    let t: f64 = w.iter().sum();
                    w.iter_mut().for_each(|v| *v /= t);
                    let children: Vec<(usize, f64)> = w
                        .into_iter()
                        .map(|p| {
                            next_parents.push(Some((s, j)));
                            (next_parents.len() - 1, p)
                        })
                        .collect();
                    let spec = if k == 1 { NextSpec::State(children[0].0) } else { NextSpec::Distribution(children) };
                    st.next.insert(key, spec);
                }
            }
            layer.push(st);
        }
        layers.push(layer);
        prev_infosets = infosets;
        parents = next_parents;
    }
    Ok(TreeGame::from_spec(&GameSpec { players: m, horizon, action_counts: vec![actions; m], initial, states: layers })?)
}

/// A mixture of `n` random behavioral product policies with random weights.
pub fn random_mixture<R: Rng + ?Sized>(game: &TreeGame, n: usize, rng: &mut R) -> Result<CorrelatedPolicy, GenError> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let t: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= t);
    let comps = w.into_iter().map(|wi| (wi, ProductPolicy::random(game, rng))).collect();
    Ok(CorrelatedPolicy::new(comps)?)
}
