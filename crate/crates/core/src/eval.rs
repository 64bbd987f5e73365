//! Exact equilibrium gaps of correlated policies.
//!
//! Every gap is computed per player with the opponents frozen at each
//! mixture component, then maximized over players. The K-EFCE gap uses a
//! best-response recursion over `(infoset, recommendation history)` pairs;
//! along such a path the recommendations seen so far fix a per-component
//! weight, so the deviator's problem is a perfect-recall tree.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deviation::{DeviationError, ModificationJson, RecKind, Rechistory, RechistoryTable, StrategyModification, DEFAULT_REC_CAP};
use crate::game::{immediate_rewards, others_prob, value, TreeGame};
use crate::policy::{BehavioralPolicy, CorrelatedPolicy, ProductPolicy};

/// Default cap on the number of modifications a brute-force search may evaluate.
pub const DEFAULT_BRUTE_CAP: u128 = 10_000_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Deviation(#[from] DeviationError),
    #[error("{count} candidates exceed the cap {cap}")]
    BudgetExceeded { count: u128, cap: u128 },
    #[error("the mixture has a component that is not pure")]
    PurityRequired,
    #[error("empty policy sequence")]
    Empty,
}

/// Result of a gap computation.
#[derive(Debug, Clone)]
pub struct GapReport {
    /// Largest per-player gain over all players.
    pub gap: f64,
    /// Player attaining `gap` (lowest index on ties).
    pub player: usize,
    /// Best gain of each player.
    pub per_player: Vec<f64>,
    /// A best modification of each player.
    pub modifications: Vec<StrategyModification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReportJson {
    pub gap: f64,
    pub player: usize,
    pub per_player: Vec<f64>,
    pub modification_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modification: Option<ModificationJson>,
}

impl GapReport {
    fn from_players(per_player: Vec<f64>, modifications: Vec<StrategyModification>) -> Self {
        let mut player = 0;
        for (i, &g) in per_player.iter().enumerate() {
            if g > per_player[player] {
                player = i;
            }
        }
        GapReport { gap: per_player[player], player, per_player, modifications }
    }

    /// The arg-max modification.
    pub fn best(&self) -> &StrategyModification {
        &self.modifications[self.player]
    }

    /// Serializable summary; `full` also embeds the arg-max modification.
    pub fn to_json(&self, game: &TreeGame, full: bool) -> GapReportJson {
        GapReportJson {
            gap: self.gap,
            player: self.player,
            per_player: self.per_player.clone(),
            modification_digest: self.best().digest(),
            modification: full.then(|| self.best().to_json(game)),
        }
    }
}

/// `Σ_c w_c V_i(π^c)`.
pub fn mixture_value(game: &TreeGame, mix: &CorrelatedPolicy, player: usize) -> f64 {
    mix.components().iter().map(|(w, p)| w * value(game, p, player)).sum()
}

/// Per-component inputs of the deviator's problem.
struct Weighted<'a> {
    weights: Vec<f64>,
    own: Vec<&'a BehavioralPolicy>,
    rewards: Vec<Vec<f64>>,
}

impl<'a> Weighted<'a> {
    fn new(game: &TreeGame, comps: &[(f64, &'a ProductPolicy)], player: usize) -> Self {
        let rewards = comps.par_iter().map(|(_, p)| immediate_rewards(game, p, player)).collect();
        Weighted {
            weights: comps.iter().map(|(w, _)| *w).collect(),
            own: comps.iter().map(|(_, p)| p.player(player)).collect(),
            rewards,
        }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    /// `Σ_c w_c μ_c G^c(x, a)`.
    fn reward(&self, mu: &[f64], idx: usize) -> f64 {
        (0..self.len()).map(|c| self.weights[c] * mu[c] * self.rewards[c][idx]).sum()
    }
}

struct Dp<'a> {
    game: &'a TreeGame,
    player: usize,
    a_n: usize,
    table: &'a RechistoryTable,
    data: &'a Weighted<'a>,
}

impl Dp<'_> {
    fn solve(&self, cur: &Rechistory, mu: &[f64], phi: &mut StrategyModification) -> f64 {
        let x = cur.infoset;
        let info = self.game.infoset(self.player, x);
        let idx = self.table.position(cur).expect("history enumerated");
        match cur.kind {
            RecKind::TypeI => {
                let mut total = 0.0;
                for r in 0..self.a_n {
                    let nu: Vec<f64> = mu.iter().zip(&self.data.own).map(|(m, p)| m * p.prob(x, r)).collect();
                    if nu.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let mut best = f64::NEG_INFINITY;
                    let mut best_a = 0;
                    for a in 0..self.a_n {
                        let mut q = self.data.reward(&nu, x * self.a_n + a);
                        for &child in &info.children[a] {
                            q += self.solve(&self.table.advance(cur, child, r, a), &nu, phi);
                        }
                        if q > best {
                            best = q;
                            best_a = a;
                        }
                    }
                    phi.set_swap(x, idx, r, best_a);
                    total += best;
                }
                total
            }
            RecKind::TypeII => {
                let mut best = f64::NEG_INFINITY;
                let mut best_a = 0;
                for a in 0..self.a_n {
                    let mut q = self.data.reward(mu, x * self.a_n + a);
                    for &child in &info.children[a] {
                        q += self.solve(&cur.with_infoset(child), mu, phi);
                    }
                    if q > best {
                        best = q;
                        best_a = a;
                    }
                }
                phi.set_fixed(x, idx, best_a);
                best
            }
        }
    }
}

/// Best value of `Σ_c w_c V_i((φ∘π^c_i) × π^c_{-i})` over `φ ∈ Φ_i^K`, and a maximizer.
fn best_modified_value(
    game: &TreeGame,
    comps: &[(f64, &ProductPolicy)],
    player: usize,
    k: usize,
) -> Result<(f64, StrategyModification), EvalError> {
    let table = Arc::new(RechistoryTable::build(game, player, k, DEFAULT_REC_CAP)?);
    let data = Weighted::new(game, comps, player);
    let dp = Dp { game, player, a_n: game.num_actions(player), table: &table, data: &data };
    let mut phi = StrategyModification::identity(table.clone());
    let mu = vec![1.0; data.len()];
    let total = game
        .infosets_in_layer(player, 0)
        .map(|x| dp.solve(&table.root(x), &mu, &mut phi))
        .sum();
    Ok((total, phi))
}

fn weighted_components(mix: &CorrelatedPolicy) -> Vec<(f64, &ProductPolicy)> {
    mix.components().iter().map(|(w, p)| (*w, p)).collect()
}

/// Gains with `K ≥ 1` are nonnegative since the identity modification is
/// available; only rounding is removed. With `K = 0` the raw value is kept.
fn settle(gain: f64, k: usize) -> f64 {
    if k >= 1 {
        gain.max(0.0)
    } else {
        gain
    }
}

/// K-EFCE gap by backward induction over recommendation histories.
pub fn kefce_gap(game: &TreeGame, mix: &CorrelatedPolicy, k: usize) -> Result<GapReport, EvalError> {
    let comps = weighted_components(mix);
    let results: Result<Vec<(f64, StrategyModification)>, EvalError> = (0..game.num_players())
        .into_par_iter()
        .map(|i| {
            let (best, phi) = best_modified_value(game, &comps, i, k)?;
            Ok((settle(best - mixture_value(game, mix, i), k), phi))
        })
        .collect();
    let (per_player, mods) = results?.into_iter().unzip();
    Ok(GapReport::from_players(per_player, mods))
}

/// `Σ_c w_c V_i((φ∘π^c_i) × π^c_{-i})` by a joint traversal of states and
/// recommendation histories.
pub fn value_of_modified(game: &TreeGame, phi: &StrategyModification, mix: &CorrelatedPolicy) -> f64 {
    mix.components().iter().map(|(w, p)| w * modified_component_value(game, phi, p)).sum()
}

fn modified_component_value(game: &TreeGame, phi: &StrategyModification, profile: &ProductPolicy) -> f64 {
    let me = phi.player();
    let table = phi.table();
    let pi = profile.player(me);

    #[allow(clippy::too_many_arguments)]
    fn walk(
        game: &TreeGame,
        phi: &StrategyModification,
        profile: &ProductPolicy,
        pi: &BehavioralPolicy,
        h: usize,
        s: usize,
        cur: Rechistory,
        prob: f64,
    ) -> f64 {
        let me = phi.player();
        let node = game.state(h, s);
        let x = node.infosets[me];
        let cur = cur.with_infoset(x);
        // Own (action, probability, next history) branches.
        let branches: Vec<(usize, f64, Rechistory)> = match cur.kind {
            RecKind::TypeI => (0..game.num_actions(me))
                .filter(|&r| pi.prob(x, r) > 0.0)
                .map(|r| {
                    let a = phi.act(&cur, r);
                    (a, pi.prob(x, r), phi.table().advance(&cur, x, r, a))
                })
                .collect(),
            RecKind::TypeII => vec![(phi.act(&cur, 0), 1.0, cur.clone())],
        };
        let mut total = 0.0;
        for (a, pr, next) in branches {
            for joint in 0..game.num_joint() {
                if game.joint_actions(joint)[me] != a {
                    continue;
                }
                let q = others_prob(game, profile, h, s, joint, Some(me));
                if q == 0.0 {
                    continue;
                }
                let w = prob * pr * q;
                total += w * game.reward(h, s, joint, me);
                if h + 1 < game.horizon() {
                    for &(c, p) in &node.next[joint] {
                        total += walk(game, phi, profile, pi, h + 1, c, next.clone(), w * p);
                    }
                }
            }
        }
        total
    }

    game.initial()
        .iter()
        .enumerate()
        .filter(|(_, &p0)| p0 > 0.0)
        .map(|(s, &p0)| {
            let root = table.root(game.state(0, s).infosets[me]);
            walk(game, phi, profile, pi, 0, s, root, p0)
        })
        .sum()
}

/// Number of modifications in `Φ_i^K` (saturating).
pub fn modification_count(game: &TreeGame, player: usize, k: usize) -> Result<u128, EvalError> {
    let table = RechistoryTable::build(game, player, k, DEFAULT_REC_CAP)?;
    let phi = StrategyModification::identity(Arc::new(table));
    Ok((game.num_actions(player) as u128).saturating_pow(phi.num_entries() as u32))
}

/// One editable slot of a modification.
#[derive(Clone, Copy)]
enum Slot {
    Swap { x: usize, idx: usize, rec: usize },
    Fixed { x: usize, idx: usize },
}

fn slots(game: &TreeGame, table: &RechistoryTable) -> Vec<Slot> {
    let mut out = Vec::new();
    for x in 0..game.num_infosets(table.player()) {
        for idx in 0..table.type_i(x).len() {
            for rec in 0..table.num_actions() {
                out.push(Slot::Swap { x, idx, rec });
            }
        }
        for idx in 0..table.type_ii(x).len() {
            out.push(Slot::Fixed { x, idx });
        }
    }
    out
}

/// K-EFCE gap by evaluating every modification. Exponential; the oracle for [`kefce_gap`].
pub fn kefce_gap_bruteforce(game: &TreeGame, mix: &CorrelatedPolicy, k: usize, cap: u128) -> Result<GapReport, EvalError> {
    let mut per_player = Vec::new();
    let mut mods = Vec::new();
    for i in 0..game.num_players() {
        let table = Arc::new(RechistoryTable::build(game, i, k, DEFAULT_REC_CAP)?);
        let slots = slots(game, &table);
        let a_n = game.num_actions(i) as u128;
        let count = a_n.checked_pow(slots.len() as u32).unwrap_or(u128::MAX);
        if count > cap {
            return Err(EvalError::BudgetExceeded { count, cap });
        }
        let base = StrategyModification::identity(table);
        let decode = |mut code: u128| {
            let mut phi = base.clone();
            for slot in &slots {
                let a = (code % a_n) as usize;
                code /= a_n;
                match *slot {
                    Slot::Swap { x, idx, rec } => phi.set_swap(x, idx, rec, a),
                    Slot::Fixed { x, idx } => phi.set_fixed(x, idx, a),
                }
            }
            phi
        };
        let (best, code) = (0..count as u64)
            .into_par_iter()
            .map(|code| (value_of_modified(game, &decode(code as u128), mix), code))
            .reduce(
                || (f64::NEG_INFINITY, u64::MAX),
                |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        per_player.push(settle(best - mixture_value(game, mix, i), k));
        mods.push(decode(code as u128));
    }
    Ok(GapReport::from_players(per_player, mods))
}

/// Best value of a pure policy of `player` against the weighted components,
/// with `G` tables already scaled by the weights.
fn best_response(game: &TreeGame, player: usize, g: &[f64]) -> f64 {
    let a_n = game.num_actions(player);
    let mut v = vec![0.0; game.num_infosets(player)];
    for x in (0..game.num_infosets(player)).rev() {
        let info = game.infoset(player, x);
        v[x] = (0..a_n)
            .map(|a| g[x * a_n + a] + info.children[a].iter().map(|&c| v[c]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
    }
    game.infosets_in_layer(player, 0).map(|x| v[x]).sum()
}

fn scaled_rewards(game: &TreeGame, comps: &[(f64, &ProductPolicy)], player: usize) -> Vec<f64> {
    let per: Vec<Vec<f64>> = comps.par_iter().map(|(_, p)| immediate_rewards(game, p, player)).collect();
    let mut g = vec![0.0; game.num_infosets(player) * game.num_actions(player)];
    for ((w, _), t) in comps.iter().zip(&per) {
        for (acc, v) in g.iter_mut().zip(t) {
            *acc += w * v;
        }
    }
    g
}

/// Trigger gap: the best gain from following the recommendations until a
/// chosen `(x, a)` is recommended and then switching to a best pure
/// continuation, which starts at `x` itself.
pub fn trigger_gap(game: &TreeGame, mix: &CorrelatedPolicy) -> f64 {
    (0..game.num_players())
        .into_par_iter()
        .map(|i| trigger_gap_player(game, mix, i))
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

fn trigger_gap_player(game: &TreeGame, mix: &CorrelatedPolicy, player: usize) -> f64 {
    let a_n = game.num_actions(player);
    let n_x = game.num_infosets(player);
    let comps = weighted_components(mix);
    let data = Weighted::new(game, &comps, player);
    // B^c(y, a): value below (y, a) when following π^c from there on.
    let follow: Vec<Vec<f64>> = (0..data.len())
        .map(|c| {
            let pi = data.own[c];
            let mut b = data.rewards[c].clone();
            for y in (0..n_x).rev() {
                for a in 0..a_n {
                    let cont: f64 = game.infoset(player, y).children[a]
                        .iter()
                        .map(|&z| (0..a_n).map(|a2| pi.prob(z, a2) * b[z * a_n + a2]).sum::<f64>())
                        .sum();
                    b[y * a_n + a] += cont;
                }
            }
            b
        })
        .collect();
    let mut best = 0.0f64;
    for x in 0..n_x {
        for a in 0..a_n {
            let kappa: Vec<f64> = (0..data.len())
                .map(|c| crate::game::sequence_form(game, data.own[c], x, a))
                .collect();
            if kappa.iter().all(|&v| v == 0.0) {
                continue;
            }
            let baseline: f64 = (0..data.len()).map(|c| data.weights[c] * kappa[c] * follow[c][x * a_n + a]).sum();
            // Best pure continuation in the subtree of x, weights w_c κ_c.
            let deviated = subtree_best(game, player, x, &|y, b| data.reward(&kappa, y * a_n + b));
            best = best.max(deviated - baseline);
        }
    }
    best
}

fn subtree_best(game: &TreeGame, player: usize, x: usize, g: &dyn Fn(usize, usize) -> f64) -> f64 {
    let info = game.infoset(player, x);
    (0..game.num_actions(player))
        .map(|a| g(x, a) + info.children[a].iter().map(|&c| subtree_best(game, player, c, g)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// NFCCE gap: best response to the whole mixture, minus its value.
pub fn nfcce_gap(game: &TreeGame, mix: &CorrelatedPolicy) -> f64 {
    let comps = weighted_components(mix);
    (0..game.num_players())
        .map(|i| best_response(game, i, &scaled_rewards(game, &comps, i)) - mixture_value(game, mix, i))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Groups the components by player `i`'s pure policy.
fn groups_by_own_policy(mix: &CorrelatedPolicy, player: usize) -> Result<Vec<Vec<(f64, &ProductPolicy)>>, EvalError> {
    let mut keys: Vec<Vec<usize>> = Vec::new();
    let mut groups: Vec<Vec<(f64, &ProductPolicy)>> = Vec::new();
    for (w, p) in mix.components() {
        let key = p.player(player).pure_actions().ok_or(EvalError::PurityRequired)?;
        match keys.iter().position(|k| *k == key) {
            Some(g) => groups[g].push((*w, p)),
            None => {
                keys.push(key);
                groups.push(vec![(*w, p)]);
            }
        }
    }
    Ok(groups)
}

/// NFCE gap of a mixture of pure product policies: the deviator sees its
/// whole recommended pure policy and best-responds to each group.
pub fn nfce_gap(game: &TreeGame, mix: &CorrelatedPolicy) -> Result<f64, EvalError> {
    if !mix.is_pure_mixture() {
        return Err(EvalError::PurityRequired);
    }
    let mut best = f64::NEG_INFINITY;
    for i in 0..game.num_players() {
        let groups = groups_by_own_policy(mix, i)?;
        let dev: f64 = groups.iter().map(|g| best_response(game, i, &scaled_rewards(game, g, i))).sum();
        best = best.max(dev - mixture_value(game, mix, i));
    }
    Ok(best)
}

/// NFCE gap by enumerating every pure response of every group.
pub fn nfce_gap_bruteforce(game: &TreeGame, mix: &CorrelatedPolicy, cap: u128) -> Result<f64, EvalError> {
    if !mix.is_pure_mixture() {
        return Err(EvalError::PurityRequired);
    }
    let mut best = f64::NEG_INFINITY;
    for i in 0..game.num_players() {
        let n_x = game.num_infosets(i);
        let a_n = game.num_actions(i) as u128;
        let count = a_n.checked_pow(n_x as u32).unwrap_or(u128::MAX);
        if count > cap {
            return Err(EvalError::BudgetExceeded { count, cap });
        }
        let mut dev = 0.0;
        for g in groups_by_own_policy(mix, i)? {
            let group_best = (0..count as u64)
                .into_par_iter()
                .map(|code| {
                    let mut code = code as u128;
                    let acts: Vec<usize> = (0..n_x)
                        .map(|_| {
                            let a = (code % a_n) as usize;
                            code /= a_n;
                            a
                        })
                        .collect();
                    let sigma = BehavioralPolicy::pure(game, i, &acts);
                    g.iter().map(|(w, p)| w * value(game, &p.with_player(sigma.clone()), i)).sum::<f64>()
                })
                .reduce(|| f64::NEG_INFINITY, f64::max);
            dev += group_best;
        }
        best = best.max(dev - mixture_value(game, mix, i));
    }
    Ok(best)
}

/// K-EFCE regret of a policy sequence: `max_i max_φ Σ_t (V^{φ∘π^t} − V^{π^t})`.
pub fn kefce_regret(game: &TreeGame, seq: &[ProductPolicy], k: usize) -> Result<f64, EvalError> {
    if seq.is_empty() {
        return Err(EvalError::Empty);
    }
    let comps: Vec<(f64, &ProductPolicy)> = seq.iter().map(|p| (1.0, p)).collect();
    let per: Result<Vec<f64>, EvalError> = (0..game.num_players())
        .into_par_iter()
        .map(|i| {
            let (best, _) = best_modified_value(game, &comps, i, k)?;
            let base: f64 = seq.iter().map(|p| value(game, p, i)).sum();
            Ok(settle(best - base, k))
        })
        .collect();
    Ok(per?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}
