//! Tree-structured partially observable Markov games with perfect recall.
//!
//! Layers and actions are 0-based throughout the crate. A state at layer `h`
//! is addressed by `(h, s)` where `s` indexes `layer(h)`. Infosets are
//! numbered per player, sorted by layer, so the infosets of one layer form a
//! contiguous range.

mod eval;
mod format;
mod sim;

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use eval::{
    counterfactual_losses, immediate_rewards, marginal_reach, marginal_reach_all, opponent_reach, sequence_form,
    sequence_form_range, state_reach, value, LossTable,
};
pub use format::{joint_key, parse_joint_key, GameSpec, Label, NextSpec, StateSpec};
pub(crate) use sim::run_episode;
pub use sim::{play_episode, sample_index, Step, Trajectory};
pub(crate) use eval::others_prob;

/// Tolerance used when checking that probability vectors sum to one.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("malformed game: {0}")]
    Malformed(String),
    #[error("tree violation: {0}")]
    TreeViolation(String),
    #[error("perfect recall violated: {0}")]
    RecallViolation(String),
    #[error("probabilities do not sum to one: {0}")]
    StochasticityError(String),
    #[error("reward out of [0,1]: {0}")]
    RewardRange(String),
    #[error("invalid json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct StateNode {
    /// Infoset id of this state for each player.
    pub infosets: Vec<usize>,
    /// Rewards indexed by `joint * num_players + player`.
    rewards: Vec<f64>,
    /// Successor distribution per joint action; empty on the last layer.
    pub next: Vec<Vec<(usize, f64)>>,
    /// `(parent state, joint action)`; `None` on the first layer.
    pub parent: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Infoset {
    pub label: String,
    pub layer: usize,
    /// States of `layer` contained in this infoset.
    pub states: Vec<usize>,
    /// Own `(infoset, action)` pairs on the path to this infoset, oldest first.
    pub history: Vec<(usize, usize)>,
    /// Child infosets on the next layer, per action.
    pub children: Vec<Vec<usize>>,
    /// `descendants[a * horizon + h]` = number of layer-`h` infosets below `(x, a)`.
    descendants: Vec<usize>,
}

impl Infoset {
    /// Ancestor action at layer `k < self.layer`.
    pub fn ancestor_action(&self, k: usize) -> usize {
        self.history[k].1
    }
}

#[derive(Debug, Clone)]
struct PlayerTree {
    infosets: Vec<Infoset>,
    layer_start: Vec<usize>,
}

/// A validated game. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TreeGame {
    num_players: usize,
    horizon: usize,
    action_counts: Vec<usize>,
    joint_actions: Vec<Vec<usize>>,
    layers: Vec<Vec<StateNode>>,
    initial: Vec<f64>,
    players: Vec<PlayerTree>,
}

/// Structural summary of a game plus a content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GameDigest {
    pub players: usize,
    pub horizon: usize,
    pub action_counts: Vec<usize>,
    pub states_per_layer: Vec<usize>,
    /// `infosets_per_layer[i][h]`.
    pub infosets_per_layer: Vec<Vec<usize>>,
    pub hash: String,
}

impl TreeGame {
    /// Parses and validates a JSON game document.
    pub fn from_json(text: &str) -> Result<Self, GameError> {
        let spec: GameSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    pub fn from_spec(spec: &GameSpec) -> Result<Self, GameError> {
        validate(spec)
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_actions(&self, player: usize) -> usize {
        self.action_counts[player]
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn num_joint(&self) -> usize {
        self.joint_actions.len()
    }

    /// Per-player actions of a joint action index.
    pub fn joint_actions(&self, joint: usize) -> &[usize] {
        &self.joint_actions[joint]
    }

    /// Inverse of [`TreeGame::joint_actions`]; player 0 is the fastest digit.
    pub fn joint_index(&self, actions: &[usize]) -> usize {
        let mut idx = 0;
        for i in (0..self.num_players).rev() {
            idx = idx * self.action_counts[i] + actions[i];
        }
        idx
    }

    pub fn layer(&self, h: usize) -> &[StateNode] {
        &self.layers[h]
    }

    pub fn state(&self, h: usize, s: usize) -> &StateNode {
        &self.layers[h][s]
    }

    pub fn reward(&self, h: usize, s: usize, joint: usize, player: usize) -> f64 {
        self.layers[h][s].rewards[joint * self.num_players + player]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn num_states(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn num_infosets(&self, player: usize) -> usize {
        self.players[player].infosets.len()
    }

    pub fn infoset(&self, player: usize, x: usize) -> &Infoset {
        &self.players[player].infosets[x]
    }

    pub fn infosets(&self, player: usize) -> &[Infoset] {
        &self.players[player].infosets
    }

    /// Ids of the player's infosets on layer `h`.
    pub fn infosets_in_layer(&self, player: usize, h: usize) -> Range<usize> {
        let ls = &self.players[player].layer_start;
        ls[h]..ls[h + 1]
    }

    pub fn layer_size(&self, player: usize, h: usize) -> usize {
        self.infosets_in_layer(player, h).len()
    }

    /// |C_h(x, a)|: number of layer-`h` infosets of the player below `(x, a)`.
    /// Zero when `h` is not below the layer of `x`.
    pub fn descendants(&self, player: usize, x: usize, a: usize, h: usize) -> usize {
        let info = &self.players[player].infosets[x];
        if h <= info.layer {
            return 0;
        }
        info.descendants[a * self.horizon + h]
    }

    /// Id of the infoset labelled `label` for `player`.
    pub fn find_infoset(&self, player: usize, label: &str) -> Option<usize> {
        self.players[player].infosets.iter().position(|x| x.label == label)
    }

    /// Converts back to the file format.
    pub fn to_spec(&self) -> GameSpec {
        let m = self.num_players;
        let states = self
            .layers
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|node| {
                        let infoset = (0..m)
                            .map(|i| Label::Str(self.players[i].infosets[node.infosets[i]].label.clone()))
                            .collect();
                        let mut rewards = BTreeMap::new();
                        let mut next = BTreeMap::new();
                        for joint in 0..self.num_joint() {
                            let key = joint_key(&self.joint_actions[joint]);
                            let r = &node.rewards[joint * m..(joint + 1) * m];
                            if r.iter().any(|&v| v != 0.0) {
                                rewards.insert(key.clone(), r.to_vec());
                            }
                            if let Some(dist) = node.next.get(joint) {
                                let spec = match dist.as_slice() {
                                    [(c, p)] if *p == 1.0 => NextSpec::State(*c),
                                    _ => NextSpec::Distribution(dist.clone()),
                                };
                                next.insert(key, spec);
                            }
                        }
                        StateSpec { infoset, rewards, next }
                    })
                    .collect()
            })
            .collect();
        GameSpec {
            players: m,
            horizon: self.horizon,
            action_counts: self.action_counts.clone(),
            initial: self.initial.clone(),
            states,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_spec()).expect("game spec serializes")
    }

    pub fn digest(&self) -> GameDigest {
        let hash = Sha256::digest(self.to_json().as_bytes());
        let hex: String = hash.iter().take(8).map(|b| format!("{b:02x}")).collect();
        GameDigest {
            players: self.num_players,
            horizon: self.horizon,
            action_counts: self.action_counts.clone(),
            states_per_layer: self.layers.iter().map(Vec::len).collect(),
            infosets_per_layer: (0..self.num_players)
                .map(|i| (0..self.horizon).map(|h| self.layer_size(i, h)).collect())
                .collect(),
            hash: hex,
        }
    }
}

fn check_distribution(probs: &[f64], what: impl Fn() -> String) -> Result<(), GameError> {
    let mut total = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(GameError::StochasticityError(format!("{}: entry {p}", what())));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(GameError::StochasticityError(format!("{}: sum {total}", what())));
    }
    Ok(())
}

fn validate(spec: &GameSpec) -> Result<TreeGame, GameError> {
    let m = spec.players;
    let horizon = spec.horizon;
    if m == 0 {
        return Err(GameError::Malformed("need at least one player".into()));
    }
    if horizon == 0 {
        return Err(GameError::Malformed("horizon must be at least 1".into()));
    }
    if spec.action_counts.len() != m {
        return Err(GameError::Malformed(format!(
            "{} action counts for {m} players",
            spec.action_counts.len()
        )));
    }
    if spec.action_counts.contains(&0) {
        return Err(GameError::Malformed("every player needs at least one action".into()));
    }
    if spec.states.len() != horizon {
        return Err(GameError::Malformed(format!(
            "{} layers for horizon {horizon}",
            spec.states.len()
        )));
    }
    if let Some(h) = spec.states.iter().position(Vec::is_empty) {
        return Err(GameError::Malformed(format!("layer {h} has no states")));
    }
    if spec.initial.len() != spec.states[0].len() {
        return Err(GameError::Malformed(format!(
            "initial distribution has {} entries for {} first-layer states",
            spec.initial.len(),
            spec.states[0].len()
        )));
    }
    check_distribution(&spec.initial, || "initial distribution".into())?;

    let action_counts = spec.action_counts.clone();
    let num_joint: usize = action_counts.iter().product();
    let joint_actions: Vec<Vec<usize>> = (0..num_joint)
        .map(|mut j| {
            action_counts
                .iter()
                .map(|&a| {
                    let x = j % a;
                    j /= a;
                    x
                })
                .collect()
        })
        .collect();
    let joint_of = |actions: &[usize]| -> usize {
        let mut idx = 0;
        for i in (0..m).rev() {
            idx = idx * action_counts[i] + actions[i];
        }
        idx
    };
    let parse_key = |key: &str, where_: &dyn Fn() -> String| -> Result<usize, GameError> {
        let acts = parse_joint_key(key)
            .ok_or_else(|| GameError::Malformed(format!("{}: bad joint action '{key}'", where_())))?;
        if acts.len() != m || acts.iter().zip(&action_counts).any(|(a, n)| a >= n) {
            return Err(GameError::Malformed(format!("{}: joint action '{key}' out of range", where_())));
        }
        Ok(joint_of(&acts))
    };

    // States, rewards, transitions.
    let mut layers: Vec<Vec<StateNode>> = Vec::with_capacity(horizon);
    for (h, layer) in spec.states.iter().enumerate() {
        let mut nodes = Vec::with_capacity(layer.len());
        for (s, st) in layer.iter().enumerate() {
            let loc = || format!("state ({h},{s})");
            if st.infoset.len() != m {
                return Err(GameError::Malformed(format!("{}: {} infoset labels", loc(), st.infoset.len())));
            }
            let mut rewards = vec![0.0; num_joint * m];
            let mut seen = vec![false; num_joint];
            for (key, r) in &st.rewards {
                let j = parse_key(key, &loc)?;
                if std::mem::replace(&mut seen[j], true) {
                    return Err(GameError::Malformed(format!("{}: duplicate reward key '{key}'", loc())));
                }
                if r.len() != m {
                    return Err(GameError::Malformed(format!("{}: reward '{key}' has {} entries", loc(), r.len())));
                }
                for (i, &v) in r.iter().enumerate() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(GameError::RewardRange(format!("{}, joint '{key}', player {i}: {v}", loc())));
                    }
                    rewards[j * m + i] = v;
                }
            }
            let mut next: Vec<Vec<(usize, f64)>> = Vec::new();
            if h + 1 < horizon {
                let mut slots: Vec<Option<Vec<(usize, f64)>>> = vec![None; num_joint];
                let width = spec.states[h + 1].len();
                for (key, nx) in &st.next {
                    let j = parse_key(key, &loc)?;
                    if slots[j].is_some() {
                        return Err(GameError::Malformed(format!("{}: duplicate transition key '{key}'", loc())));
                    }
                    let dist = match nx {
                        NextSpec::State(c) => vec![(*c, 1.0)],
                        NextSpec::Distribution(d) => d.clone(),
                    };
                    let probs: Vec<f64> = dist.iter().map(|&(_, p)| p).collect();
                    check_distribution(&probs, || format!("{}, joint '{key}'", loc()))?;
                    let mut targets: Vec<usize> = dist.iter().map(|&(c, _)| c).collect();
                    if let Some(&c) = targets.iter().find(|&&c| c >= width) {
                        return Err(GameError::Malformed(format!("{}: successor {c} out of range", loc())));
                    }
                    targets.sort_unstable();
                    if targets.windows(2).any(|w| w[0] == w[1]) {
                        return Err(GameError::Malformed(format!("{}: repeated successor under '{key}'", loc())));
                    }
                    slots[j] = Some(dist.into_iter().filter(|&(_, p)| p > 0.0).collect());
                }
                for (j, slot) in slots.into_iter().enumerate() {
                    match slot {
                        Some(d) => next.push(d),
                        None => {
                            return Err(GameError::Malformed(format!(
                                "{}: no transition for joint action '{}'",
                                loc(),
                                joint_key(&joint_actions[j])
                            )))
                        }
                    }
                }
            } else if !st.next.is_empty() {
                return Err(GameError::Malformed(format!("{}: last-layer state has transitions", loc())));
            }
            nodes.push(StateNode { infosets: vec![0; m], rewards, next, parent: None });
        }
        layers.push(nodes);
    }

    // Every non-initial state needs exactly one incoming edge.
    for h in 1..horizon {
        let mut parents: Vec<Vec<(usize, usize)>> = vec![Vec::new(); layers[h].len()];
        for (s, node) in layers[h - 1].iter().enumerate() {
            for (j, dist) in node.next.iter().enumerate() {
                for &(c, _) in dist {
                    parents[c].push((s, j));
                }
            }
        }
        for (c, ps) in parents.into_iter().enumerate() {
            match ps.as_slice() {
                [p] => layers[h][c].parent = Some(*p),
                [] => return Err(GameError::TreeViolation(format!("state ({h},{c}) is unreachable"))),
                _ => {
                    return Err(GameError::TreeViolation(format!(
                        "state ({h},{c}) has {} predecessors",
                        ps.len()
                    )))
                }
            }
        }
    }

    // Infosets.
    let mut players = Vec::with_capacity(m);
    for i in 0..m {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut infosets: Vec<Infoset> = Vec::new();
        let mut layer_start = Vec::with_capacity(horizon + 1);
        for h in 0..horizon {
            layer_start.push(infosets.len());
            for s in 0..layers[h].len() {
                let label = spec.states[h][s].infoset[i].to_string();
                let x = match ids.get(&label) {
                    Some(&x) => {
                        if infosets[x].layer != h {
                            return Err(GameError::RecallViolation(format!(
                                "player {i} infoset '{label}' spans layers {} and {h}",
                                infosets[x].layer
                            )));
                        }
                        x
                    }
                    None => {
                        let x = infosets.len();
                        ids.insert(label.clone(), x);
                        infosets.push(Infoset {
                            label,
                            layer: h,
                            states: Vec::new(),
                            history: Vec::new(),
                            children: vec![Vec::new(); action_counts[i]],
                            descendants: vec![0; action_counts[i] * horizon],
                        });
                        x
                    }
                };
                infosets[x].states.push(s);
                layers[h][s].infosets[i] = x;
            }
        }
        layer_start.push(infosets.len());

        // Perfect recall: all states of an infoset share the parent's infoset and own action.
        for x in 0..infosets.len() {
            let h = infosets[x].layer;
            if h == 0 {
                continue;
            }
            let mut key: Option<(usize, usize)> = None;
            for &s in &infosets[x].states {
                let (p, j) = layers[h][s].parent.expect("non-initial state has a parent");
                let k = (layers[h - 1][p].infosets[i], joint_actions[j][i]);
                match key {
                    None => key = Some(k),
                    Some(prev) if prev != k => {
                        return Err(GameError::RecallViolation(format!(
                            "player {i} infoset '{}' mixes own histories",
                            infosets[x].label
                        )))
                    }
                    _ => {}
                }
            }
            let (px, pa) = key.expect("infoset is nonempty");
            let mut history = infosets[px].history.clone();
            history.push((px, pa));
            infosets[x].history = history;
            infosets[px].children[pa].push(x);
        }

        // Descendant counts, deepest layer first.
        for x in (0..infosets.len()).rev() {
            let layer = infosets[x].layer;
            for a in 0..action_counts[i] {
                let mut counts = vec![0usize; horizon];
                for &c in &infosets[x].children[a] {
                    counts[layer + 1] += 1;
                    for h in layer + 2..horizon {
                        counts[h] += (0..action_counts[i])
                            .map(|b| infosets[c].descendants[b * horizon + h])
                            .sum::<usize>();
                    }
                }
                infosets[x].descendants[a * horizon..(a + 1) * horizon].copy_from_slice(&counts);
            }
        }
        players.push(PlayerTree { infosets, layer_start });
    }

    Ok(TreeGame {
        num_players: m,
        horizon,
        action_counts,
        joint_actions,
        layers,
        initial: spec.initial.clone(),
        players,
    })
}
