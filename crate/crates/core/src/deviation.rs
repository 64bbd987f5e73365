//! Recommendation histories and the K-deviation strategy modifications.
//!
//! A deviating player receives a recommended action at every infoset. While
//! fewer than `K` of its own actions have differed from the recommendations
//! (a Type-I history), it sees each recommendation and maps it to an action
//! through a swap table. Once the `K`-th difference has happened (Type-II)
//! it stops looking and plays a fixed action per infoset.
//!
//! Histories are stored by their deviation set: the non-deviating entries
//! equal the infoset's own ancestor actions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{run_episode, sample_index, TreeGame, Trajectory};
use crate::policy::{BehavioralPolicy, ProductPolicy};

/// Default cap on the number of enumerated histories.
pub const DEFAULT_REC_CAP: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum DeviationError {
    #[error("cannot fill a set of size {size} up to {n}")]
    SizeError { size: usize, n: usize },
    #[error("recommendation list of length {len} at an infoset with {ancestors} ancestors")]
    LengthError { len: usize, ancestors: usize },
    #[error("action {action} out of range")]
    ActionRange { action: usize },
    #[error("{count} recommendation histories exceed the cap {cap}")]
    BudgetExceeded { count: u128, cap: u128 },
    #[error("modification does not match: {0}")]
    Mismatch(String),
}

/// `set` plus the `n - |set|` smallest integers `>= start` not in it.
pub fn fill_from(set: &BTreeSet<usize>, n: usize, start: usize) -> Result<BTreeSet<usize>, DeviationError> {
    if n < set.len() {
        return Err(DeviationError::SizeError { size: set.len(), n });
    }
    let mut out = set.clone();
    let mut k = start;
    while out.len() < n {
        out.insert(k);
        k += 1;
    }
    Ok(out)
}

/// Fill over the positive integers: `fill({1,3,8}, 5) = {1,2,3,4,8}`.
pub fn fill(set: &BTreeSet<usize>, n: usize) -> Result<BTreeSet<usize>, DeviationError> {
    if set.contains(&0) {
        return Err(DeviationError::Mismatch("fill works on positive integers".into()));
    }
    fill_from(set, n, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecKind {
    TypeI,
    TypeII,
}

/// A recommendation history at an infoset.
///
/// `len` is the number of observed recommendations: the infoset's layer for
/// Type-I, or one past the `K`-th deviation for Type-II. `deviations` lists
/// `(layer, recommended action)` where the recommendation differed from the
/// ancestor action, sorted by layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rechistory {
    pub infoset: usize,
    pub kind: RecKind,
    pub len: usize,
    pub deviations: Vec<(usize, usize)>,
}

impl Rechistory {
    /// The full recommendation list.
    pub fn actions(&self, game: &TreeGame, player: usize) -> Vec<usize> {
        let info = game.infoset(player, self.infoset);
        let mut b: Vec<usize> = (0..self.len).map(|k| info.ancestor_action(k)).collect();
        for &(k, r) in &self.deviations {
            b[k] = r;
        }
        b
    }

    pub fn deviation_set(&self) -> BTreeSet<usize> {
        self.deviations.iter().map(|&(k, _)| k).collect()
    }

    /// Compact text form, e.g. `I:2:0=1` (Type-I, two recommendations, the
    /// first one deviating to action 1).
    pub fn encode(&self) -> String {
        let kind = match self.kind {
            RecKind::TypeI => "I",
            RecKind::TypeII => "II",
        };
        let devs: Vec<String> = self.deviations.iter().map(|(k, r)| format!("{k}={r}")).collect();
        format!("{kind}:{}:{}", self.len, devs.join(","))
    }

    pub(crate) fn with_infoset(&self, x: usize) -> Rechistory {
        Rechistory { infoset: x, ..self.clone() }
    }

    fn prefix(&self, x: usize, len: usize) -> Rechistory {
        Rechistory {
            infoset: x,
            kind: RecKind::TypeI,
            len,
            deviations: self.deviations.iter().copied().filter(|&(k, _)| k < len).collect(),
        }
    }
}

/// Classifies the recommendation list `b` at infoset `x` of `player` for
/// budget `k`. Returns `None` when `b` is neither Type-I nor Type-II.
pub fn classify(game: &TreeGame, player: usize, x: usize, b: &[usize], k: usize) -> Result<Option<Rechistory>, DeviationError> {
    let info = game.infoset(player, x);
    let n = info.layer;
    if b.len() > n {
        return Err(DeviationError::LengthError { len: b.len(), ancestors: n });
    }
    if let Some(&action) = b.iter().find(|&&a| a >= game.num_actions(player)) {
        return Err(DeviationError::ActionRange { action });
    }
    let deviations: Vec<(usize, usize)> = b
        .iter()
        .enumerate()
        .filter(|&(idx, &r)| r != info.ancestor_action(idx))
        .map(|(idx, &r)| (idx, r))
        .collect();
    let d = deviations.len();
    let kind = if k >= 1 && d < k && b.len() == n {
        RecKind::TypeI
    } else if d == k && (if k == 0 { b.is_empty() } else { deviations.last().map(|&(idx, _)| idx + 1) == Some(b.len()) }) {
        RecKind::TypeII
    } else {
        return Ok(None);
    };
    Ok(Some(Rechistory { infoset: x, kind, len: b.len(), deviations }))
}

fn binom(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Sizes of the Type-I and Type-II sets at an infoset with `n` ancestors.
pub fn rechistory_counts(n: usize, num_actions: usize, k: usize) -> (u128, u128) {
    let dev = num_actions.saturating_sub(1) as u128;
    let type_i = if k == 0 {
        0
    } else {
        (0..=(k - 1).min(n)).map(|d| binom(n, d).saturating_mul(dev.saturating_pow(d as u32))).sum()
    };
    let type_ii = if k == 0 {
        1
    } else {
        (k..=n).map(|hp| binom(hp - 1, k - 1).saturating_mul(dev.saturating_pow(k as u32))).sum()
    };
    (type_i, type_ii)
}

/// Calls `f` on every increasing `size`-subset of `0..n`.
fn for_each_subset(n: usize, size: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == size {
            f(cur);
            return;
        }
        for k in start..n {
            if n - k < size - cur.len() {
                break;
            }
            cur.push(k);
            rec(k + 1, n, size, cur, f);
            cur.pop();
        }
    }
    rec(0, n, size, &mut Vec::with_capacity(size), f);
}

/// Calls `f` on every assignment of a deviating action to each position.
fn for_each_deviation(game: &TreeGame, player: usize, x: usize, positions: &[usize], f: &mut dyn FnMut(Vec<(usize, usize)>)) {
    let info = game.infoset(player, x);
    let a_n = game.num_actions(player);
    let choices: Vec<Vec<usize>> = positions
        .iter()
        .map(|&k| (0..a_n).filter(|&r| r != info.ancestor_action(k)).collect())
        .collect();
    if choices.iter().any(Vec::is_empty) {
        return;
    }
    let mut idx = vec![0usize; positions.len()];
    loop {
        f(positions.iter().zip(&idx).zip(&choices).map(|((&k, &i), c)| (k, c[i])).collect());
        let mut p = positions.len();
        loop {
            if p == 0 {
                return;
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < choices[p].len() {
                break;
            }
            idx[p] = 0;
        }
    }
}

/// The Type-I and Type-II histories at infoset `x`, in a fixed order.
pub fn enumerate_rechistories(
    game: &TreeGame,
    player: usize,
    k: usize,
    x: usize,
    cap: u128,
) -> Result<(Vec<Rechistory>, Vec<Rechistory>), DeviationError> {
    let n = game.infoset(player, x).layer;
    let (ci, cii) = rechistory_counts(n, game.num_actions(player), k);
    let count = ci.saturating_add(cii);
    if count > cap {
        return Err(DeviationError::BudgetExceeded { count, cap });
    }
    let mut type_i = Vec::new();
    let mut type_ii = Vec::new();
    if k == 0 {
        type_ii.push(Rechistory { infoset: x, kind: RecKind::TypeII, len: 0, deviations: Vec::new() });
        return Ok((type_i, type_ii));
    }
    for d in 0..=(k - 1).min(n) {
        for_each_subset(n, d, &mut |pos| {
            for_each_deviation(game, player, x, pos, &mut |deviations| {
                type_i.push(Rechistory { infoset: x, kind: RecKind::TypeI, len: n, deviations });
            });
        });
    }
    for hp in k..=n {
        for_each_subset(hp - 1, k - 1, &mut |pos| {
            let mut pos = pos.to_vec();
            pos.push(hp - 1);
            for_each_deviation(game, player, x, &pos, &mut |deviations| {
                type_ii.push(Rechistory { infoset: x, kind: RecKind::TypeII, len: hp, deviations });
            });
        });
    }
    Ok((type_i, type_ii))
}

/// All histories of one player for budget `k`, with a reverse index.
#[derive(Debug, Clone)]
pub struct RechistoryTable {
    player: usize,
    k: usize,
    num_actions: usize,
    type_i: Vec<Vec<Rechistory>>,
    type_ii: Vec<Vec<Rechistory>>,
    index: HashMap<Rechistory, usize>,
}

impl RechistoryTable {
    pub fn build(game: &TreeGame, player: usize, k: usize, cap: u128) -> Result<Self, DeviationError> {
        let a_n = game.num_actions(player);
        let mut total: u128 = 0;
        for x in 0..game.num_infosets(player) {
            let (ci, cii) = rechistory_counts(game.infoset(player, x).layer, a_n, k);
            total = total.saturating_add(ci).saturating_add(cii);
        }
        if total > cap {
            return Err(DeviationError::BudgetExceeded { count: total, cap });
        }
        let mut type_i = Vec::with_capacity(game.num_infosets(player));
        let mut type_ii = Vec::with_capacity(game.num_infosets(player));
        let mut index = HashMap::new();
        for x in 0..game.num_infosets(player) {
            let (ti, tii) = enumerate_rechistories(game, player, k, x, cap)?;
            for (pos, r) in ti.iter().enumerate() {
                index.insert(r.clone(), pos);
            }
            for (pos, r) in tii.iter().enumerate() {
                index.insert(r.clone(), pos);
            }
            type_i.push(ti);
            type_ii.push(tii);
        }
        Ok(RechistoryTable { player, k, num_actions: a_n, type_i, type_ii, index })
    }

    pub fn player(&self) -> usize {
        self.player
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn type_i(&self, x: usize) -> &[Rechistory] {
        &self.type_i[x]
    }

    pub fn type_ii(&self, x: usize) -> &[Rechistory] {
        &self.type_ii[x]
    }

    /// Position of `r` within its kind's list at its infoset.
    pub fn position(&self, r: &Rechistory) -> Option<usize> {
        self.index.get(r).copied()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// History at the first layer for an episode that has not deviated yet.
    pub fn root(&self, x: usize) -> Rechistory {
        Rechistory {
            infoset: x,
            kind: if self.k == 0 { RecKind::TypeII } else { RecKind::TypeI },
            len: 0,
            deviations: Vec::new(),
        }
    }

    /// History at child infoset `child` after being at `cur` (on layer
    /// `cur.len` for Type-I) with recommendation `rec` and action `action`.
    pub fn advance(&self, cur: &Rechistory, child: usize, rec: usize, action: usize) -> Rechistory {
        match cur.kind {
            RecKind::TypeII => cur.with_infoset(child),
            RecKind::TypeI => {
                let layer = cur.len;
                let mut deviations = cur.deviations.clone();
                if rec != action {
                    deviations.push((layer, rec));
                }
                let kind = if deviations.len() < self.k { RecKind::TypeI } else { RecKind::TypeII };
                Rechistory { infoset: child, kind, len: layer + 1, deviations }
            }
        }
    }
}

/// A deterministic deviation rule: a swap table for every Type-I history and
/// a fixed action for every Type-II history.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyModification {
    table: Arc<RechistoryTable>,
    swaps: Vec<Vec<Vec<usize>>>,
    fixed: Vec<Vec<usize>>,
}

impl PartialEq for RechistoryTable {
    fn eq(&self, other: &Self) -> bool {
        self.player == other.player && self.k == other.k && self.type_i == other.type_i && self.type_ii == other.type_ii
    }
}

/// Serialized modification, keyed by `infoset label|encoded history`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationJson {
    pub player: usize,
    pub k: usize,
    pub swaps: BTreeMap<String, Vec<usize>>,
    pub fixed: BTreeMap<String, usize>,
}

impl StrategyModification {
    /// The modification that always follows the recommendation. At Type-II
    /// histories, where nothing is observed, it plays the infoset's first action.
    pub fn identity(table: Arc<RechistoryTable>) -> Self {
        let a_n = table.num_actions;
        let swaps = table.type_i.iter().map(|v| vec![(0..a_n).collect(); v.len()]).collect();
        let fixed = table.type_ii.iter().map(|v| vec![0; v.len()]).collect();
        StrategyModification { table, swaps, fixed }
    }

    pub fn table(&self) -> &Arc<RechistoryTable> {
        &self.table
    }

    pub fn player(&self) -> usize {
        self.table.player
    }

    pub fn k(&self) -> usize {
        self.table.k
    }

    pub fn swap(&self, x: usize, idx: usize, rec: usize) -> usize {
        self.swaps[x][idx][rec]
    }

    pub fn fixed(&self, x: usize, idx: usize) -> usize {
        self.fixed[x][idx]
    }

    pub fn set_swap(&mut self, x: usize, idx: usize, rec: usize, action: usize) {
        self.swaps[x][idx][rec] = action;
    }

    pub fn set_fixed(&mut self, x: usize, idx: usize, action: usize) {
        self.fixed[x][idx] = action;
    }

    /// Number of independent choices: one per (Type-I history, recommendation)
    /// and one per Type-II history.
    pub fn num_entries(&self) -> usize {
        let a_n = self.table.num_actions;
        self.swaps.iter().map(|v| v.len() * a_n).sum::<usize>() + self.fixed.iter().map(Vec::len).sum::<usize>()
    }

    /// Action taken at `cur` given recommendation `rec` (ignored at Type-II).
    pub fn act(&self, cur: &Rechistory, rec: usize) -> usize {
        let idx = self.table.position(cur).expect("history belongs to the table");
        match cur.kind {
            RecKind::TypeI => self.swaps[cur.infoset][idx][rec],
            RecKind::TypeII => self.fixed[cur.infoset][idx],
        }
    }

    pub fn to_json(&self, game: &TreeGame) -> ModificationJson {
        let player = self.player();
        let key = |r: &Rechistory| format!("{}|{}", game.infoset(player, r.infoset).label, r.encode());
        let mut swaps = BTreeMap::new();
        let mut fixed = BTreeMap::new();
        for x in 0..self.swaps.len() {
            for (idx, r) in self.table.type_i[x].iter().enumerate() {
                swaps.insert(key(r), self.swaps[x][idx].clone());
            }
            for (idx, r) in self.table.type_ii[x].iter().enumerate() {
                fixed.insert(key(r), self.fixed[x][idx]);
            }
        }
        ModificationJson { player, k: self.k(), swaps, fixed }
    }

    /// Overwrites entries from `json`; the table must have been built for the same player and budget.
    pub fn apply_json(&mut self, game: &TreeGame, json: &ModificationJson) -> Result<(), DeviationError> {
        if json.player != self.player() || json.k != self.k() {
            return Err(DeviationError::Mismatch("player or budget differs".into()));
        }
        let j = self.to_json(game);
        for (key, tbl) in &json.swaps {
            if !j.swaps.contains_key(key) {
                return Err(DeviationError::Mismatch(format!("unknown history '{key}'")));
            }
            if tbl.len() != self.table.num_actions || tbl.iter().any(|&a| a >= self.table.num_actions) {
                return Err(DeviationError::Mismatch(format!("bad swap table for '{key}'")));
            }
        }
        for (key, &a) in &json.fixed {
            if !j.fixed.contains_key(key) || a >= self.table.num_actions {
                return Err(DeviationError::Mismatch(format!("bad fixed entry '{key}'")));
            }
        }
        let player = self.player();
        for x in 0..self.swaps.len() {
            let label = &game.infoset(player, x).label;
            for idx in 0..self.swaps[x].len() {
                let key = format!("{label}|{}", self.table.type_i[x][idx].encode());
                if let Some(t) = json.swaps.get(&key) {
                    self.swaps[x][idx] = t.clone();
                }
            }
            for idx in 0..self.fixed[x].len() {
                let key = format!("{label}|{}", self.table.type_ii[x][idx].encode());
                if let Some(&a) = json.fixed.get(&key) {
                    self.fixed[x][idx] = a;
                }
            }
        }
        Ok(())
    }

    /// Short content hash, used in gap reports.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (x, rows) in self.swaps.iter().enumerate() {
            for (idx, row) in rows.iter().enumerate() {
                h.update(format!("{x}/{idx}:{row:?};").as_bytes());
            }
        }
        for (x, row) in self.fixed.iter().enumerate() {
            h.update(format!("{x}:{row:?};").as_bytes());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Plays one episode of the modified policy for `φ.player()` against the
/// other players of `profile`. The deviator's recommendations are drawn from
/// its own entry of `profile`.
pub fn execute_modified<R: Rng + ?Sized>(
    game: &TreeGame,
    phi: &StrategyModification,
    profile: &ProductPolicy,
    rng: &mut R,
) -> Trajectory {
    let me = phi.player();
    let table = phi.table();
    let mut cur: Option<Rechistory> = None;
    run_episode(game, rng, |_, i, x, rng| {
        let row = profile.player(i).row(x);
        if i != me {
            return sample_index(row, rng);
        }
        let here = match cur.take() {
            None => table.root(x),
            Some(c) => c.with_infoset(x),
        };
        let (action, rec) = match here.kind {
            RecKind::TypeI => {
                let rec = sample_index(row, rng);
                (phi.act(&here, rec), rec)
            }
            RecKind::TypeII => (phi.act(&here, 0), 0),
        };
        // The child infoset is not known yet; `with_infoset` fixes it on the next call.
        cur = Some(table.advance(&here, x, rec, action));
        action
    })
}

/// Sequence-form probability that the modified policy plays the ancestor
/// actions of `x` and then `a`, summed over recommendation histories.
pub fn modified_sequence_form(game: &TreeGame, phi: &StrategyModification, pi: &BehavioralPolicy, x: usize, a: usize) -> f64 {
    let player = phi.player();
    let table = phi.table();
    let info = game.infoset(player, x);
    let n = info.layer;
    let mut path: Vec<usize> = info.history.iter().map(|&(y, _)| y).collect();
    path.push(x);
    let ancestors: Vec<usize> = (0..n).map(|k| info.ancestor_action(k)).collect();

    // Probability of the observed recommendations with Type-I play matching the path.
    let observed = |r: &Rechistory, upto: usize| -> f64 {
        let b = r.actions(game, player);
        let mut p = 1.0;
        for k in 0..upto {
            let pre = r.prefix(path[k], k);
            p *= pi.prob(path[k], b[k]);
            if p == 0.0 || phi.act(&pre, b[k]) != ancestors[k] {
                return 0.0;
            }
        }
        p
    };

    let mut total = 0.0;
    for r in table.type_i(x) {
        let p = observed(r, n);
        if p == 0.0 {
            continue;
        }
        let here: f64 = (0..game.num_actions(player))
            .filter(|&rec| phi.act(r, rec) == a)
            .map(|rec| pi.prob(x, rec))
            .sum();
        total += p * here;
    }
    for r in table.type_ii(x) {
        if phi.act(r, 0) != a {
            continue;
        }
        let blind_ok = (r.len..n).all(|k| phi.act(&r.with_infoset(path[k]), 0) == ancestors[k]);
        if blind_ok {
            total += observed(r, r.len);
        }
    }
    total
}

/// Embeds `φ ∈ Φ^K` into `Φ^{K+1}`: once `K` deviations have happened the
/// lifted rule ignores further recommendations and plays what `φ` would
/// play blind.
pub fn lift(game: &TreeGame, phi: &StrategyModification, cap: u128) -> Result<StrategyModification, DeviationError> {
    let k = phi.k();
    let player = phi.player();
    let table = Arc::new(RechistoryTable::build(game, player, k + 1, cap)?);
    let mut out = StrategyModification::identity(table.clone());
    // The Type-II history of budget k that a longer history passed through.
    let frozen = |r: &Rechistory| -> Rechistory {
        let deviations: Vec<(usize, usize)> = r.deviations[..k].to_vec();
        let len = deviations.last().map_or(0, |&(idx, _)| idx + 1);
        Rechistory { infoset: r.infoset, kind: RecKind::TypeII, len, deviations }
    };
    for x in 0..game.num_infosets(player) {
        for (idx, r) in table.type_i(x).iter().enumerate() {
            if r.deviations.len() < k {
                for rec in 0..game.num_actions(player) {
                    out.set_swap(x, idx, rec, phi.act(r, rec));
                }
            } else {
                let a = phi.act(&frozen(r), 0);
                for rec in 0..game.num_actions(player) {
                    out.set_swap(x, idx, rec, a);
                }
            }
        }
        for (idx, r) in table.type_ii(x).iter().enumerate() {
            out.set_fixed(x, idx, phi.act(&frozen(r), 0));
        }
    }
    Ok(out)
}
