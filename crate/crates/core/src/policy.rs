//! Behavioral, product and correlated policies, plus the balanced
//! exploration policies used for bandit-feedback sampling.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{sample_index, TreeGame, PROB_TOL};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("correlated policy has no components")]
    EmptyMixture,
    #[error("invalid distribution: {0}")]
    InvalidRow(String),
    #[error("policy does not match the game: {0}")]
    Mismatch(String),
    #[error("invalid json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-infoset action distributions of one player.
#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralPolicy {
    player: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

fn check_row(row: &[f64], what: impl Fn() -> String) -> Result<(), PolicyError> {
    let mut total = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(PolicyError::InvalidRow(format!("{}: entry {p}", what())));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(PolicyError::InvalidRow(format!("{}: sum {total}", what())));
    }
    Ok(())
}

impl BehavioralPolicy {
    pub fn uniform(game: &TreeGame, player: usize) -> Self {
        let a = game.num_actions(player);
        BehavioralPolicy {
            player,
            num_actions: a,
            probs: vec![1.0 / a as f64; game.num_infosets(player) * a],
        }
    }

    /// Deterministic policy playing `actions[x]` at infoset `x`.
    pub fn pure(game: &TreeGame, player: usize, actions: &[usize]) -> Self {
        let a = game.num_actions(player);
        assert_eq!(actions.len(), game.num_infosets(player), "one action per infoset");
        let mut probs = vec![0.0; actions.len() * a];
        for (x, &act) in actions.iter().enumerate() {
            assert!(act < a, "action {act} out of range");
            probs[x * a + act] = 1.0;
        }
        BehavioralPolicy { player, num_actions: a, probs }
    }

    pub fn from_rows(game: &TreeGame, player: usize, rows: Vec<Vec<f64>>) -> Result<Self, PolicyError> {
        let a = game.num_actions(player);
        if rows.len() != game.num_infosets(player) {
            return Err(PolicyError::Mismatch(format!(
                "{} rows for {} infosets",
                rows.len(),
                game.num_infosets(player)
            )));
        }
        let mut probs = Vec::with_capacity(rows.len() * a);
        for (x, row) in rows.into_iter().enumerate() {
            if row.len() != a {
                return Err(PolicyError::Mismatch(format!("row {x} has {} entries", row.len())));
            }
            check_row(&row, || format!("player {player} infoset {x}"))?;
            probs.extend(row);
        }
        Ok(BehavioralPolicy { player, num_actions: a, probs })
    }

    /// Rows drawn uniformly from the simplex.
    pub fn random<R: Rng + ?Sized>(game: &TreeGame, player: usize, rng: &mut R) -> Self {
        let a = game.num_actions(player);
        let mut probs = Vec::with_capacity(game.num_infosets(player) * a);
        for _ in 0..game.num_infosets(player) {
            let raw: Vec<f64> = (0..a).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / total));
        }
        BehavioralPolicy { player, num_actions: a, probs }
    }

    /// A uniformly random deterministic policy.
    pub fn random_pure<R: Rng + ?Sized>(game: &TreeGame, player: usize, rng: &mut R) -> Self {
        let a = game.num_actions(player);
        let actions: Vec<usize> = (0..game.num_infosets(player)).map(|_| rng.random_range(0..a)).collect();
        Self::pure(game, player, &actions)
    }

    pub fn player(&self) -> usize {
        self.player
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_infosets(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.num_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.num_actions..(x + 1) * self.num_actions]
    }

    /// Overwrites the row of infoset `x`; the caller guarantees it is a distribution.
    pub fn set_row(&mut self, x: usize, row: &[f64]) {
        self.probs[x * self.num_actions..(x + 1) * self.num_actions].copy_from_slice(row);
    }

    pub fn is_pure(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// For a deterministic policy, the action taken at each infoset.
    pub fn pure_actions(&self) -> Option<Vec<usize>> {
        (0..self.num_infosets())
            .map(|x| self.row(x).iter().position(|&p| p == 1.0))
            .collect()
    }

    pub fn to_json(&self, game: &TreeGame) -> PolicyJson {
        PolicyJson {
            player: self.player,
            rows: (0..self.num_infosets())
                .map(|x| (game.infoset(self.player, x).label.clone(), self.row(x).to_vec()))
                .collect(),
        }
    }

    pub fn from_json(game: &TreeGame, json: &PolicyJson) -> Result<Self, PolicyError> {
        let player = json.player;
        if player >= game.num_players() {
            return Err(PolicyError::Mismatch(format!("no player {player}")));
        }
        let mut rows = vec![None; game.num_infosets(player)];
        for (label, row) in &json.rows {
            let x = game
                .find_infoset(player, label)
                .ok_or_else(|| PolicyError::Mismatch(format!("unknown infoset '{label}'")))?;
            rows[x] = Some(row.clone());
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(x, r)| {
                r.ok_or_else(|| {
                    PolicyError::Mismatch(format!("missing row for '{}'", game.infoset(player, x).label))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(game, player, rows)
    }
}

/// Serialized behavioral policy: `{player, rows: {infoset label: [probabilities]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyJson {
    pub player: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

/// One behavioral policy per player.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPolicy {
    policies: Vec<BehavioralPolicy>,
}

impl ProductPolicy {
    pub fn new(policies: Vec<BehavioralPolicy>) -> Self {
        for (i, p) in policies.iter().enumerate() {
            assert_eq!(p.player(), i, "policies must be ordered by player");
        }
        ProductPolicy { policies }
    }

    pub fn uniform(game: &TreeGame) -> Self {
        Self::new((0..game.num_players()).map(|i| BehavioralPolicy::uniform(game, i)).collect())
    }

    pub fn random<R: Rng + ?Sized>(game: &TreeGame, rng: &mut R) -> Self {
        Self::new((0..game.num_players()).map(|i| BehavioralPolicy::random(game, i, rng)).collect())
    }

    pub fn player(&self, i: usize) -> &BehavioralPolicy {
        &self.policies[i]
    }

    pub fn player_mut(&mut self, i: usize) -> &mut BehavioralPolicy {
        &mut self.policies[i]
    }

    pub fn num_players(&self) -> usize {
        self.policies.len()
    }

    pub fn policies(&self) -> &[BehavioralPolicy] {
        &self.policies
    }

    /// Copy with player `i`'s policy replaced.
    pub fn with_player(&self, policy: BehavioralPolicy) -> Self {
        let mut out = self.clone();
        let i = policy.player();
        out.policies[i] = policy;
        out
    }

    pub fn is_pure(&self) -> bool {
        self.policies.iter().all(BehavioralPolicy::is_pure)
    }
}

/// Finite mixture of product policies.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedPolicy {
    components: Vec<(f64, ProductPolicy)>,
    pure_mixture: bool,
}

impl CorrelatedPolicy {
    pub fn new(components: Vec<(f64, ProductPolicy)>) -> Result<Self, PolicyError> {
        if components.is_empty() {
            return Err(PolicyError::EmptyMixture);
        }
        let weights: Vec<f64> = components.iter().map(|(w, _)| *w).collect();
        check_row(&weights, || "mixture weights".into())?;
        let pure_mixture = components.iter().all(|(_, p)| p.is_pure());
        Ok(CorrelatedPolicy { components, pure_mixture })
    }

    /// Uniform mixture over the given product policies.
    pub fn uniform(policies: Vec<ProductPolicy>) -> Result<Self, PolicyError> {
        if policies.is_empty() {
            return Err(PolicyError::EmptyMixture);
        }
        let w = 1.0 / policies.len() as f64;
        // Built directly: summing n copies of 1/n can drift past the weight tolerance for large n.
        let pure_mixture = policies.iter().all(ProductPolicy::is_pure);
        let components = policies.into_iter().map(|p| (w, p)).collect();
        Ok(CorrelatedPolicy { components, pure_mixture })
    }

    pub fn point(policy: ProductPolicy) -> Self {
        let pure_mixture = policy.is_pure();
        CorrelatedPolicy { components: vec![(1.0, policy)], pure_mixture }
    }

    pub fn components(&self) -> &[(f64, ProductPolicy)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_pure_mixture(&self) -> bool {
        self.pure_mixture
    }

    /// Draws a component according to the mixture weights.
    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> &ProductPolicy {
        let weights: Vec<f64> = self.components.iter().map(|(w, _)| *w).collect();
        &self.components[sample_index(&weights, rng)].1
    }

    pub fn to_json(&self, game: &TreeGame) -> CorrelatedJson {
        CorrelatedJson {
            components: self
                .components
                .iter()
                .map(|(w, p)| ComponentJson {
                    weight: *w,
                    policies: p.policies().iter().map(|b| b.to_json(game)).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(game: &TreeGame, json: &CorrelatedJson) -> Result<Self, PolicyError> {
        let mut components = Vec::with_capacity(json.components.len());
        for c in &json.components {
            let mut policies: Vec<Option<BehavioralPolicy>> = vec![None; game.num_players()];
            for pj in &c.policies {
                let b = BehavioralPolicy::from_json(game, pj)?;
                let i = b.player();
                policies[i] = Some(b);
            }
            let policies = policies
                .into_iter()
                .enumerate()
                .map(|(i, p)| p.ok_or_else(|| PolicyError::Mismatch(format!("component lacks player {i}"))))
                .collect::<Result<Vec<_>, _>>()?;
            components.push((c.weight, ProductPolicy::new(policies)));
        }
        Self::new(components)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentJson {
    pub weight: f64,
    pub policies: Vec<PolicyJson>,
}

/// Serialized correlated policy: `{components: [{weight, policies: [...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedJson {
    pub components: Vec<ComponentJson>,
}

/// The `H` balanced exploration policies of one player, indexed by target layer.
#[derive(Debug, Clone)]
pub struct BalancedPolicySet {
    player: usize,
    policies: Vec<BehavioralPolicy>,
}

impl BalancedPolicySet {
    pub fn player(&self) -> usize {
        self.player
    }

    /// Balanced policy for target layer `h`.
    pub fn target(&self, h: usize) -> &BehavioralPolicy {
        &self.policies[h]
    }
}

/// Builds the balanced policies: before the target layer `h`, action `a` at
/// `x` is played in proportion to the number of layer-`h` infosets below
/// `(x, a)`; from layer `h` on, play is uniform.
pub fn balanced_policy_set(game: &TreeGame, player: usize) -> BalancedPolicySet {
    let a_n = game.num_actions(player);
    let policies = (0..game.horizon())
        .map(|h| {
            let mut pol = BehavioralPolicy::uniform(game, player);
            for x in 0..game.num_infosets(player) {
                if game.infoset(player, x).layer >= h {
                    continue;
                }
                let counts: Vec<f64> = (0..a_n).map(|a| game.descendants(player, x, a, h) as f64).collect();
                let total: f64 = counts.iter().sum();
                let row: Vec<f64> = counts.iter().map(|c| c / total).collect();
                pol.set_row(x, &row);
            }
            pol
        })
        .collect();
    BalancedPolicySet { player, policies }
}

/// Number of layer-`h` infosets below `x` (1 when `x` is itself on layer `h`).
fn subtree_count(game: &TreeGame, player: usize, x: usize, h: usize) -> usize {
    if game.infoset(player, x).layer == h {
        return 1;
    }
    (0..game.num_actions(player)).map(|a| game.descendants(player, x, a, h)).sum()
}

/// Balanced transition probability of infoset `x`, for the target layer `h`
/// that `x` lies on: the first-layer infoset is drawn in proportion to its
/// layer-`h` subtree size and every later step moves to a child in proportion
/// to the child's subtree size.
pub fn balanced_transition(game: &TreeGame, player: usize, x: usize) -> f64 {
    let info = game.infoset(player, x);
    let h = info.layer;
    let mut path: Vec<usize> = info.history.iter().map(|&(y, _)| y).collect();
    path.push(x);
    let mut p = subtree_count(game, player, path[0], h) as f64 / game.layer_size(player, h) as f64;
    for k in 0..h {
        let (y, a) = info.history[k];
        p *= subtree_count(game, player, path[k + 1], h) as f64 / game.descendants(player, y, a, h) as f64;
    }
    p
}
