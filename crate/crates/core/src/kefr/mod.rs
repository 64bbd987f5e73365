//! K-EFR learners in self-play.
//!
//! Every player keeps one [`WideRangeMinimizer`] per infoset. Its swap
//! indices are the infoset's Type-I histories and its external indices the
//! Type-II histories, in table order. A round walks each player's infosets in
//! layer order, so the time selection at layer `n` reads only policies already
//! fixed this round, then feeds losses once every player's policy is fixed.
//!
//! With full feedback the loss is the exact cumulative counterfactual loss.
//! With bandit feedback each player in turn plays the balanced sampling
//! episodes of [`estimator`] against the frozen opponents.

pub mod estimator;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::deviation::{DeviationError, RechistoryTable, DEFAULT_REC_CAP};
use crate::game::{counterfactual_losses, TreeGame};
use crate::policy::{balanced_policy_set, ProductPolicy};
use crate::regret::{RegretError, Variant, WideRangeMinimizer};

pub use estimator::{episodes_per_round, sample_keys, BalancedEstimator, LossEstimates, SampleKey};

#[derive(Debug, Error)]
pub enum KefrError {
    #[error(transparent)]
    Deviation(#[from] DeviationError),
    #[error("player {player}, infoset {infoset}: {source}")]
    Regret {
        player: usize,
        infoset: usize,
        #[source]
        source: RegretError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("player {player}, infoset {infoset} read a policy row not yet fixed this round")]
    Ordering { player: usize, infoset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feedback {
    Full,
    Bandit,
}

impl Feedback {
    pub fn as_str(self) -> &'static str {
        match self {
            Feedback::Full => "full",
            Feedback::Bandit => "bandit",
        }
    }
}

impl std::str::FromStr for Feedback {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Feedback::Full),
            "bandit" => Ok(Feedback::Bandit),
            other => Err(format!("unknown feedback mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    /// Deviation budget; values at or above the horizon behave as the horizon.
    pub k: usize,
    pub rounds: usize,
    pub feedback: Feedback,
    /// Per-player learning rates; `None` uses [`learning_rate`].
    pub eta: Option<Vec<f64>>,
    /// Failure probability in the bandit rate.
    pub p: f64,
    pub seed: u64,
    /// Overrides the stochastic loss cap (default: the horizon). Experimental.
    pub loss_cap: Option<f64>,
}

impl LearnerConfig {
    pub fn new(k: usize, rounds: usize, feedback: Feedback) -> Self {
        LearnerConfig { k, rounds, feedback, eta: None, p: 0.1, seed: 0, loss_cap: None }
    }

    fn validate(&self, game: &TreeGame) -> Result<(), KefrError> {
        if self.rounds == 0 {
            return Err(KefrError::Config("at least one round is required".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(KefrError::Config(format!("failure probability {} outside (0, 1)", self.p)));
        }
        if let Some(eta) = &self.eta {
            if eta.len() != game.num_players() || eta.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(KefrError::Config("need one positive finite rate per player".into()));
            }
        }
        if let Some(cap) = self.loss_cap {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(KefrError::Config(format!("loss cap {cap}")));
            }
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Default learning rate of one player.
///
/// `sum_xa` is `Σ_j X_j A_j` over all players and only enters the bandit
/// rate. A player with a single action has nothing to learn and gets rate 1.
#[allow(clippy::too_many_arguments)]
pub fn learning_rate(
    feedback: Feedback,
    horizon: usize,
    k: usize,
    num_infosets: usize,
    num_actions: usize,
    rounds: usize,
    sum_xa: usize,
    p: f64,
) -> f64 {
    if num_actions <= 1 {
        return 1.0;
    }
    let kk = k.min(horizon);
    let h = horizon as f64;
    let a = num_actions as f64;
    let base = binomial(horizon, kk) * num_infosets as f64;
    let t = rounds as f64;
    match feedback {
        Feedback::Full => (base * a.powi(kk as i32) * a.ln() / (h * h * t)).sqrt(),
        Feedback::Bandit => (base * a.powi(kk as i32 + 1) * (8.0 * sum_xa as f64 / p).ln() / (h * h * h * t)).sqrt(),
    }
}

/// Loss cap of the stochastic minimizers: the horizon.
pub fn default_loss_cap(game: &TreeGame) -> f64 {
    game.horizon() as f64
}

/// Passed to the observer after every round.
#[derive(Debug)]
pub struct RoundInfo<'a> {
    /// 1-based round number.
    pub round: usize,
    pub profile: &'a ProductPolicy,
    /// Episodes played so far, over all players.
    pub episodes: u64,
    pub elapsed: Duration,
}

impl RoundInfo<'_> {
    /// Per-player instantaneous local regret against constant actions:
    /// `Σ_x (⟨π^t(·|x), L(x,·)⟩ − min_a L(x,a))` with exact losses. Cheap
    /// enough to stream every round; the exact K-EFCE regret is left to
    /// [`crate::eval`].
    pub fn regret_proxy(&self, game: &TreeGame) -> Vec<f64> {
        (0..game.num_players())
            .map(|i| {
                let table = counterfactual_losses(game, self.profile, i);
                let pol = self.profile.player(i);
                (0..game.num_infosets(i))
                    .map(|x| {
                        let row = table.cumulative_row(x);
                        let mean: f64 = pol.row(x).iter().zip(row).map(|(p, l)| p * l).sum();
                        mean - row.iter().cloned().fold(f64::INFINITY, f64::min)
                    })
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LearnerRun {
    pub policies: Vec<ProductPolicy>,
    pub episodes: u64,
    pub etas: Vec<f64>,
}

struct PlayerState {
    table: Arc<RechistoryTable>,
    eta: f64,
    variant: Variant,
    minimizers: Vec<Option<WideRangeMinimizer>>,
    /// Per infoset, per history: the `(ancestor infoset, recommendation)` pairs of `M`.
    terms: Vec<Vec<Vec<(usize, usize)>>>,
    estimator: Option<BalancedEstimator>,
    /// Round in which each policy row was last fixed.
    fixed_in: Vec<usize>,
}

impl PlayerState {
    fn new(game: &TreeGame, player: usize, cfg: &LearnerConfig, eta: f64) -> Result<Self, KefrError> {
        let k = cfg.k.min(game.horizon());
        let table = Arc::new(RechistoryTable::build(game, player, k, DEFAULT_REC_CAP)?);
        let terms = (0..game.num_infosets(player))
            .map(|x| {
                let info = game.infoset(player, x);
                table
                    .type_i(x)
                    .iter()
                    .chain(table.type_ii(x))
                    .map(|r| r.actions(game, player).into_iter().enumerate().map(|(l, b)| (info.history[l].0, b)).collect())
                    .collect()
            })
            .collect();
        let (variant, estimator) = match cfg.feedback {
            Feedback::Full => (Variant::Exact, None),
            Feedback::Bandit => {
                let cap = cfg.loss_cap.unwrap_or_else(|| default_loss_cap(game));
                let est = BalancedEstimator::new(game, &table, balanced_policy_set(game, player));
                (Variant::Stochastic { loss_cap: cap }, Some(est))
            }
        };
        Ok(PlayerState {
            minimizers: vec![None; game.num_infosets(player)],
            fixed_in: vec![0; game.num_infosets(player)],
            table,
            eta,
            variant,
            terms,
            estimator,
        })
    }

    fn minimizer(&mut self, x: usize) -> Result<&mut WideRangeMinimizer, RegretError> {
        if self.minimizers[x].is_none() {
            let m = WideRangeMinimizer::new(
                self.table.num_actions(),
                self.table.type_i(x).len(),
                self.table.type_ii(x).len(),
                self.eta,
                self.variant,
            )?;
            self.minimizers[x] = Some(m);
        }
        Ok(self.minimizers[x].as_mut().expect("just created"))
    }

    /// Time selections at `x` under the partially built current policy.
    fn time_selection(&self, x: usize, profile: &ProductPolicy, player: usize) -> Vec<f64> {
        let pol = profile.player(player);
        let w = self.estimator.as_ref().map(|e| e.weights(x));
        self.terms[x]
            .iter()
            .enumerate()
            .map(|(b, terms)| {
                let m: f64 = terms.iter().map(|&(y, r)| pol.prob(y, r)).product();
                m * w.map_or(1.0, |w| w[b])
            })
            .collect()
    }
}

/// Runs the configured learner and reports each round to `observer`.
pub fn run_kefr<F>(game: &TreeGame, cfg: &LearnerConfig, mut observer: F) -> Result<LearnerRun, KefrError>
where
    F: FnMut(&RoundInfo<'_>),
{
    cfg.validate(game)?;
    let start = Instant::now();
    let m = game.num_players();
    let sum_xa: usize = (0..m).map(|i| game.num_infosets(i) * game.num_actions(i)).sum();
    let etas: Vec<f64> = match &cfg.eta {
        Some(e) => e.clone(),
        None => (0..m)
            .map(|i| {
                learning_rate(cfg.feedback, game.horizon(), cfg.k, game.num_infosets(i), game.num_actions(i), cfg.rounds, sum_xa, cfg.p)
            })
            .collect(),
    };
    let mut players = (0..m).map(|i| PlayerState::new(game, i, cfg, etas[i])).collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut profile = ProductPolicy::uniform(game);
    let mut policies = Vec::with_capacity(cfg.rounds);
    let mut episodes = 0u64;

    for t in 1..=cfg.rounds {
        for (i, st) in players.iter_mut().enumerate() {
            for x in 0..game.num_infosets(i) {
                let info = game.infoset(i, x);
                if info.history.iter().any(|&(y, _)| st.fixed_in[y] != t) {
                    return Err(KefrError::Ordering { player: i, infoset: x });
                }
                let s = st.time_selection(x, &profile, i);
                let wrap = |source| KefrError::Regret { player: i, infoset: x, source };
                let mz = st.minimizer(x).map_err(wrap)?;
                mz.observe_time_selection(&s).map_err(wrap)?;
                let p = mz.recommend().map_err(wrap)?;
                profile.player_mut(i).set_row(x, &p);
                st.fixed_in[x] = t;
            }
        }
        match cfg.feedback {
            Feedback::Full => {
                for (i, st) in players.iter_mut().enumerate() {
                    let losses = counterfactual_losses(game, &profile, i);
                    for x in 0..game.num_infosets(i) {
                        let wrap = |source| KefrError::Regret { player: i, infoset: x, source };
                        st.minimizer(x).map_err(wrap)?.observe_loss(losses.cumulative_row(x)).map_err(wrap)?;
                    }
                }
            }
            Feedback::Bandit => {
                for (i, st) in players.iter_mut().enumerate() {
                    let est = st.estimator.as_ref().expect("bandit state");
                    let estimates = est.estimate(game, &profile, &mut rng);
                    episodes += est.episodes_per_call();
                    for x in 0..game.num_infosets(i) {
                        let wrap = |source| KefrError::Regret { player: i, infoset: x, source };
                        st.minimizer(x).map_err(wrap)?.observe_losses(estimates.infoset(x)).map_err(wrap)?;
                    }
                }
            }
        }
        observer(&RoundInfo { round: t, profile: &profile, episodes, elapsed: start.elapsed() });
        policies.push(profile.clone());
    }
    Ok(LearnerRun { policies, episodes, etas })
}

/// Full-feedback K-EFR with the default rates (or `eta` when given).
pub fn run_kefr_full(game: &TreeGame, k: usize, rounds: usize, eta: Option<Vec<f64>>) -> Result<LearnerRun, KefrError> {
    let cfg = LearnerConfig { eta, ..LearnerConfig::new(k, rounds, Feedback::Full) };
    run_kefr(game, &cfg, |_| {})
}

/// Balanced K-EFR with bandit feedback.
pub fn run_kefr_bandit(game: &TreeGame, k: usize, rounds: usize, p: f64, seed: u64) -> Result<LearnerRun, KefrError> {
    let cfg = LearnerConfig { p, seed, ..LearnerConfig::new(k, rounds, Feedback::Bandit) };
    run_kefr(game, &cfg, |_| {})
}
