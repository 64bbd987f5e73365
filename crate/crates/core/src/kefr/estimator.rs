//! Balanced-sampling loss estimators for bandit feedback.
//!
//! One episode is played per sampling key. A Type-I key is a layer `n` and a
//! set `W̄` of `(K−1) ∧ n` earlier layers; a Type-II key is a layer `n`, a
//! history length `ℓ ∈ [K, n]`, and a deviation set `W ⊆ [0, ℓ)` of size `K`
//! containing `ℓ − 1`. The sampling policy follows the balanced policy for
//! layer `n` on the key's layers and the current policy elsewhere. All
//! layers here are 0-based.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use crate::deviation::{fill_from, Rechistory, RechistoryTable};
use crate::game::{play_episode, sequence_form, TreeGame};
use crate::policy::{BalancedPolicySet, BehavioralPolicy, ProductPolicy};

/// One sampling episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleKey {
    pub layer: usize,
    /// `None` for Type-I keys, `Some(ℓ)` for Type-II keys.
    pub len: Option<usize>,
    /// `W̄` for Type-I, `W` for Type-II.
    pub set: BTreeSet<usize>,
}

impl SampleKey {
    /// Layers on which the sampling policy uses the balanced policy.
    pub fn balanced_layers(&self) -> BTreeSet<usize> {
        let mut s = self.set.clone();
        match self.len {
            None => {
                s.insert(self.layer);
            }
            Some(len) => s.extend(len..=self.layer),
        }
        s
    }
}

fn subsets(n: usize, size: usize) -> Vec<BTreeSet<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<BTreeSet<usize>>) {
        if cur.len() == size {
            out.push(cur.iter().copied().collect());
            return;
        }
        for k in start..n {
            cur.push(k);
            rec(k + 1, n, size, cur, out);
            cur.pop();
        }
    }
    rec(0, n, size, &mut cur, &mut out);
    out
}

/// Every sampling key for horizon `horizon` and budget `k`, Type-I first.
pub fn sample_keys(horizon: usize, k: usize) -> Vec<SampleKey> {
    let mut keys = Vec::new();
    if k >= 1 {
        for n in 0..horizon {
            for set in subsets(n, (k - 1).min(n)) {
                keys.push(SampleKey { layer: n, len: None, set });
            }
        }
    }
    for n in 0..horizon {
        if k == 0 {
            keys.push(SampleKey { layer: n, len: Some(0), set: BTreeSet::new() });
            continue;
        }
        for len in k..=n {
            for mut set in subsets(len - 1, k - 1) {
                set.insert(len - 1);
                keys.push(SampleKey { layer: n, len: Some(len), set });
            }
        }
    }
    keys
}

/// Episodes per player per round: `C(H+1, K∧H+1) + K∧H − 1`.
pub fn episodes_per_round(horizon: usize, k: usize) -> u64 {
    let kk = k.min(horizon);
    let mut c: u128 = 1;
    for i in 0..(kk + 1) as u128 {
        c = c * (horizon as u128 + 1 - i) / (i + 1);
    }
    (c + kk as u128 - 1) as u64
}

/// Estimated counterfactual losses per `(x, history)`; histories are
/// numbered Type-I first, then Type-II, as in the table.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimates {
    num_actions: usize,
    /// Per infoset, per history, the estimate vector.
    values: Vec<Vec<Vec<f64>>>,
}

impl LossEstimates {
    pub fn get(&self, x: usize, b: usize) -> &[f64] {
        &self.values[x][b]
    }

    pub fn infoset(&self, x: usize) -> &[Vec<f64>] {
        &self.values[x]
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// Per-player sampling plan and balancing weights.
#[derive(Debug, Clone)]
pub struct BalancedEstimator {
    player: usize,
    keys: Vec<SampleKey>,
    balanced: BalancedPolicySet,
    /// Per infoset, per history: the sampling key it reads.
    key_of: Vec<Vec<usize>>,
    /// Per infoset, per history: the balancing weight `w_b(x)`.
    weights: Vec<Vec<f64>>,
}

impl BalancedEstimator {
    pub fn new(game: &TreeGame, table: &RechistoryTable, balanced: BalancedPolicySet) -> Self {
        let player = table.player();
        let k = table.k();
        let keys = sample_keys(game.horizon(), k);
        let index: HashMap<(usize, Option<usize>, Vec<usize>), usize> = keys
            .iter()
            .enumerate()
            .map(|(pos, key)| ((key.layer, key.len, key.set.iter().copied().collect()), pos))
            .collect();
        let mut key_of = Vec::with_capacity(game.num_infosets(player));
        let mut weights = Vec::with_capacity(game.num_infosets(player));
        for x in 0..game.num_infosets(player) {
            let info = game.infoset(player, x);
            let n = info.layer;
            let target = balanced.target(n);
            let mut ks = Vec::new();
            let mut ws = Vec::new();
            let hists: Vec<&Rechistory> = table.type_i(x).iter().chain(table.type_ii(x)).collect();
            for r in hists {
                let dev = r.deviation_set();
                let (key, layers) = match r.kind {
                    crate::deviation::RecKind::TypeI => {
                        let filled = fill_from(&dev, k.saturating_sub(1).min(n), 0).expect("at most K-1 deviations");
                        let mut layers = filled.clone();
                        layers.insert(n);
                        ((n, None, filled.into_iter().collect::<Vec<_>>()), layers)
                    }
                    crate::deviation::RecKind::TypeII => {
                        let mut layers = dev.clone();
                        layers.extend(r.len..=n);
                        ((n, Some(r.len), dev.into_iter().collect::<Vec<_>>()), layers)
                    }
                };
                ks.push(index[&key]);
                // At layer n the balanced policy is uniform, so the action there is immaterial.
                let w: f64 = layers
                    .iter()
                    .map(|&l| if l == n { target.prob(x, 0) } else { target.prob(info.history[l].0, info.history[l].1) })
                    .product();
                ws.push(w);
            }
            key_of.push(ks);
            weights.push(ws);
        }
        BalancedEstimator { player, keys, balanced, key_of, weights }
    }

    pub fn player(&self) -> usize {
        self.player
    }

    pub fn keys(&self) -> &[SampleKey] {
        &self.keys
    }

    pub fn episodes_per_call(&self) -> u64 {
        self.keys.len() as u64
    }

    /// Balancing weights of the histories at `x`.
    pub fn weights(&self, x: usize) -> &[f64] {
        &self.weights[x]
    }

    /// The sampling policy of `key` given the current policy `pi`.
    pub fn sampling_policy(&self, game: &TreeGame, key: &SampleKey, pi: &BehavioralPolicy) -> BehavioralPolicy {
        let star = self.balanced.target(key.layer);
        let layers = key.balanced_layers();
        let mut out = pi.clone();
        for x in 0..game.num_infosets(self.player) {
            if layers.contains(&game.infoset(self.player, x).layer) {
                out.set_row(x, star.row(x));
            }
        }
        out
    }

    /// Plays one episode per key against `profile` and returns the estimates.
    pub fn estimate<R: Rng + ?Sized>(&self, game: &TreeGame, profile: &ProductPolicy, rng: &mut R) -> LossEstimates {
        let me = self.player;
        let a_n = game.num_actions(me);
        // Per key: (visited infoset, action, importance-weighted future loss).
        let samples: Vec<(usize, usize, f64)> = self
            .keys
            .iter()
            .map(|key| {
                let samp = self.sampling_policy(game, key, profile.player(me));
                let traj = play_episode(game, &profile.with_player(samp.clone()), rng);
                let view = &traj.views[me];
                let step = view[key.layer];
                let future: f64 = view[key.layer..].iter().map(|s| 1.0 - s.reward).sum();
                let denom = sequence_form(game, &samp, step.infoset, step.action);
                let value = if denom > 0.0 { future / denom } else { 0.0 };
                (step.infoset, step.action, value)
            })
            .collect();
        let values = self
            .key_of
            .iter()
            .enumerate()
            .map(|(x, ks)| {
                ks.iter()
                    .map(|&kidx| {
                        let mut v = vec![0.0; a_n];
                        let (sx, sa, val) = samples[kidx];
                        if sx == x {
                            v[sa] = val;
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        LossEstimates { num_actions: a_n, values }
    }
}
