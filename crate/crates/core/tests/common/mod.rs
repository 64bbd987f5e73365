//! Small games and instance generators shared by the integration tests.

#![allow(dead_code)]

use kefce::bench::{random_game, random_mixture, RandomGameParams};
use kefce::policy::{BehavioralPolicy, CorrelatedPolicy, ProductPolicy};
use kefce::TreeGame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn game_from(json: serde_json::Value) -> TreeGame {
    TreeGame::from_json(&json.to_string()).expect("valid test game")
}

/// One player, one step, one state, rewards per arm.
pub fn bandit(rewards: &[f64]) -> TreeGame {
    let r: serde_json::Map<String, serde_json::Value> =
        rewards.iter().enumerate().map(|(a, &v)| (a.to_string(), serde_json::json!([v]))).collect();
    game_from(serde_json::json!({
        "players": 1, "horizon": 1, "action_counts": [rewards.len()], "initial": [1.0],
        "states": [[ { "infoset": ["root"], "rewards": r } ]]
    }))
}

/// Two players, two steps; both actions are public, so each joint action
/// leads to its own layer-1 state.
pub fn two_by_two(rewards: [[f64; 2]; 4]) -> TreeGame {
    let mut layer1 = Vec::new();
    for (j, r) in rewards.iter().enumerate() {
        layer1.push(serde_json::json!({
            "infoset": [format!("s{j}"), format!("s{j}")],
            "rewards": { "0,0": r, "1,1": [r[1], r[0]] }
        }));
    }
    game_from(serde_json::json!({
        "players": 2, "horizon": 2, "action_counts": [2, 2], "initial": [1.0],
        "states": [
            [ { "infoset": ["root", "root"], "next": { "0,0": 0, "1,0": 1, "0,1": 2, "1,1": 3 } } ],
            layer1
        ]
    }))
}

/// Random tiny parameters: `m = 2`, `H ≤ 2`, `A ≤ 2`.
pub fn tiny_params<R: Rng + ?Sized>(rng: &mut R) -> RandomGameParams {
    RandomGameParams {
        players: 2,
        horizon: rng.random_range(1..=2),
        actions: 2,
        initial_states: rng.random_range(1..=2),
        max_branch: rng.random_range(1..=2),
        merge_prob: rng.random::<f64>(),
    }
}

/// Seeded random game with a random mixture of `n` behavioral components.
pub fn instance(seed: u64, n: usize) -> (TreeGame, CorrelatedPolicy) {
    let mut r = rng(seed);
    let params = tiny_params(&mut r);
    let game = random_game(seed, &params).expect("tiny game");
    let mix = random_mixture(&game, n, &mut r).expect("mixture");
    (game, mix)
}

/// Like [`instance`] but every component is pure.
pub fn pure_instance(seed: u64, n: usize) -> (TreeGame, CorrelatedPolicy) {
    let mut r = rng(seed);
    let params = tiny_params(&mut r);
    let game = random_game(seed, &params).expect("tiny game");
    let comps = (0..n)
        .map(|_| {
            let pols = (0..game.num_players()).map(|i| BehavioralPolicy::random_pure(&game, i, &mut r)).collect();
            (1.0 / n as f64, ProductPolicy::new(pols))
        })
        .collect();
    (game.clone(), CorrelatedPolicy::new(comps).expect("weights sum to one"))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// `max_ψ Σ_t S_t (⟨p_t, ℓ_t⟩ − ⟨ψ∘p_t, ℓ_t⟩)` over all maps (`swap`) or
/// constant maps. The swap maximum separates over the source action.
pub fn best_regret(ps: &[Vec<f64>], ls: &[Vec<f64>], ss: &[f64], swap: bool) -> f64 {
    let a = ps[0].len();
    let played: f64 = (0..ps.len()).map(|t| ss[t] * dot(&ps[t], &ls[t])).sum();
    let cost = |r: Option<usize>, c: usize| -> f64 {
        (0..ps.len()).map(|t| ss[t] * r.map_or(1.0, |r| ps[t][r]) * ls[t][c]).sum()
    };
    let best = if swap {
        (0..a).map(|r| (0..a).map(|c| cost(Some(r), c)).fold(f64::INFINITY, f64::min)).sum()
    } else {
        (0..a).map(|c| cost(None, c)).fold(f64::INFINITY, f64::min)
    };
    played - best
}

pub fn dot(p: &[f64], l: &[f64]) -> f64 {
    p.iter().zip(l).map(|(a, b)| a * b).sum()
}

/// `‖p(Q − I)‖₁` for the transition matrix rebuilt from the minimizer's weights.
pub fn fixed_point_residual(m: &kefce::regret::WideRangeMinimizer, s: &[f64], p: &[f64]) -> f64 {
    use kefce::regret::map_apply;
    let a = m.num_actions();
    let (swap, ext) = m.weights();
    let mut q = vec![0.0; a * a];
    let mut mass = 0.0;
    for (b, qs) in swap.iter().enumerate() {
        for (psi, &w) in qs.iter().enumerate() {
            for r in 0..a {
                q[r * a + map_apply(a, psi, r)] += s[b] * w;
            }
            mass += s[b] * w;
        }
    }
    for (e, qe) in ext.iter().enumerate() {
        for (c, &w) in qe.iter().enumerate() {
            for r in 0..a {
                q[r * a + c] += s[swap.len() + e] * w;
            }
            mass += s[swap.len() + e] * w;
        }
    }
    if mass == 0.0 {
        return 0.0;
    }
    (0..a).map(|c| ((0..a).map(|r| p[r] * q[r * a + c]).sum::<f64>() / mass - p[c]).abs()).sum()
}

/// Outcome of one adversarial run of the exact minimizer.
#[derive(Debug, Default)]
pub struct ExactRun {
    pub bound_violations: usize,
    pub weight_increases: usize,
    pub max_residual: f64,
}

/// Runs the exact minimizer for `rounds` rounds against an adversary that
/// mixes random losses with losses aimed at the recommended action, and
/// checks the deterministic wide-range regret bound for every index.
pub fn exact_regret_run(seed: u64, rounds: usize) -> ExactRun {
    use kefce::regret::{Variant, WideRangeMinimizer};
    let mut r = rng(seed);
    let a = 3;
    let n_swap = r.random_range(0..=3);
    let n_ext = r.random_range(usize::from(n_swap == 0)..=6 - n_swap);
    let n = n_swap + n_ext;
    let eta = [0.01, 0.05, 0.2, 1.0][r.random_range(0..4)];
    let scale = [1.0, 3.0, 20.0][r.random_range(0..3)];
    let mut m = WideRangeMinimizer::new(a, n_swap, n_ext, eta, Variant::Exact).unwrap();
    let mut out = ExactRun::default();
    let (mut ps, mut ls, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    let mut last_w = m.log_total_weight();
    for _ in 0..rounds {
        let s: Vec<f64> = (0..n)
            .map(|_| match r.random_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => r.random::<f64>(),
            })
            .collect();
        m.observe_time_selection(&s).unwrap();
        let w = m.log_total_weight();
        if w > last_w + 1e-9 {
            out.weight_increases += 1;
        }
        last_w = w;
        let p = m.recommend().unwrap();
        out.max_residual = out.max_residual.max(fixed_point_residual(&m, &s, &p));
        let l: Vec<f64> = if r.random_bool(0.5) {
            // Punish the most likely action.
            let top = (0..a).max_by(|&x, &y| p[x].total_cmp(&p[y])).unwrap();
            (0..a).map(|c| if c == top { scale } else { scale * r.random::<f64>() * 0.2 }).collect()
        } else {
            (0..a).map(|_| scale * r.random::<f64>()).collect()
        };
        m.observe_loss(&l).unwrap();
        ps.push(p);
        ls.push(l);
        ss.push(s);
    }
    let (psi_s, psi_e) = ((a as f64).powi(a as i32), a as f64);
    for b in 0..n {
        let sb: Vec<f64> = ss.iter().map(|s| s[b]).collect();
        let swap = b < n_swap;
        let regret = best_regret(&ps, &ls, &sb, swap);
        let penalty: f64 = (0..ps.len())
            .map(|t| eta * ls[t].iter().cloned().fold(0.0, f64::max) * sb[t] * dot(&ps[t], &ls[t]))
            .sum();
        let size = if swap { psi_s } else { psi_e };
        let bound = penalty + ((n as f64) * size).ln() / eta;
        if regret > bound + 1e-9 * (1.0 + bound.abs()) {
            out.bound_violations += 1;
        }
    }
    out
}

/// One run of the stochastic minimizer fed importance-weighted loss
/// estimates with a common mean; returns whether the high-probability
/// bound held for every index.
pub fn stochastic_regret_run(seed: u64, rounds: usize, fail_prob: f64) -> bool {
    use kefce::regret::{Variant, WideRangeMinimizer};
    let mut r = rng(seed);
    let a = 3;
    let (n_swap, n_ext) = (2, 2);
    let n = n_swap + n_ext;
    let cap = 1.0;
    let keep = 0.3;
    let eta = 0.05;
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.2..=1.0)).collect();
    let mut m = WideRangeMinimizer::new(a, n_swap, n_ext, eta, Variant::Stochastic { loss_cap: cap }).unwrap();
    let mut ps = Vec::new();
    let mut est: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    let mut ms: Vec<Vec<f64>> = vec![Vec::new(); n];
    for _ in 0..rounds {
        let mt: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let s: Vec<f64> = (0..n).map(|b| w[b] * mt[b]).collect();
        m.observe_time_selection(&s).unwrap();
        let p = m.recommend().unwrap();
        // Common mean in [0, keep], so every estimate stays below cap / S_b.
        let mean: Vec<f64> = (0..a).map(|_| keep * r.random::<f64>()).collect();
        let tilde: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..a).map(|c| if r.random_bool(keep) { mean[c] / keep } else { 0.0 }).collect())
            .collect();
        m.observe_losses(&tilde).unwrap();
        for b in 0..n {
            est[b].push(tilde[b].clone());
            ms[b].push(mt[b]);
        }
        ps.push(p);
    }
    let (psi_s, psi_e) = ((a as f64).powi(a as i32), a as f64);
    (0..n).all(|b| {
        let swap = b < n_swap;
        let regret = best_regret(&ps, &est[b], &ms[b], swap);
        let penalty: f64 = (0..ps.len()).map(|t| eta * cap * ms[b][t] * dot(&ps[t], &est[b][t])).sum();
        let size = if swap { psi_s } else { psi_e };
        regret <= penalty + ((n as f64) * size / fail_prob).ln() / (eta * w[b])
    })
}

/// Summary of a Monte Carlo check of the balanced loss estimators.
#[derive(Debug, Default)]
pub struct EstimatorCheck {
    /// Compared `(x, history, action)` cells.
    pub cells: usize,
    /// Largest `|mean − exact| / se` over cells with a positive standard error.
    pub worst_z: f64,
    /// Estimates with `S · ‖L̃‖∞ > H`.
    pub cap_violations: usize,
    /// Cells outside four standard errors.
    pub failures: Vec<String>,
}

/// `M_b · w_b` for every history at `x`, in table order.
pub fn time_selections(
    game: &TreeGame,
    table: &kefce::deviation::RechistoryTable,
    est: &kefce::kefr::BalancedEstimator,
    pi: &ProductPolicy,
    x: usize,
) -> Vec<f64> {
    let p = table.player();
    let info = game.infoset(p, x);
    table
        .type_i(x)
        .iter()
        .chain(table.type_ii(x))
        .zip(est.weights(x))
        .map(|(r, w)| {
            let m: f64 = r.actions(game, p).iter().enumerate().map(|(l, &b)| pi.player(p).prob(info.history[l].0, b)).product();
            m * w
        })
        .collect()
}

/// Draws `n` estimate sets for `player` against `profile` and compares every
/// cell's mean with the exact counterfactual loss.
pub fn check_estimator<R: Rng + ?Sized>(
    game: &TreeGame,
    profile: &ProductPolicy,
    player: usize,
    k: usize,
    n: usize,
    rng: &mut R,
) -> EstimatorCheck {
    use kefce::deviation::{RechistoryTable, DEFAULT_REC_CAP};
    use kefce::game::counterfactual_losses;
    use kefce::kefr::BalancedEstimator;
    use kefce::policy::balanced_policy_set;

    let table = RechistoryTable::build(game, player, k, DEFAULT_REC_CAP).expect("small game");
    let est = BalancedEstimator::new(game, &table, balanced_policy_set(game, player));
    let exact = counterfactual_losses(game, profile, player);
    let a_n = game.num_actions(player);
    let n_x = game.num_infosets(player);
    let h = game.horizon() as f64;
    let sel: Vec<Vec<f64>> = (0..n_x).map(|x| time_selections(game, &table, &est, profile, x)).collect();
    let zeros = |v: f64| -> Vec<Vec<Vec<f64>>> { (0..n_x).map(|x| vec![vec![v; a_n]; sel[x].len()]).collect() };
    let (mut sum, mut sq, mut hits) = (zeros(0.0), zeros(0.0), zeros(0.0));
    let mut out = EstimatorCheck::default();
    for _ in 0..n {
        let e = est.estimate(game, profile, rng);
        for x in 0..n_x {
            for (b, v) in e.infoset(x).iter().enumerate() {
                let top = v.iter().cloned().fold(0.0, f64::max);
                if sel[x][b] * top > h * (1.0 + 1e-9) {
                    out.cap_violations += 1;
                }
                for a in 0..a_n {
                    sum[x][b][a] += v[a];
                    sq[x][b][a] += v[a] * v[a];
                    hits[x][b][a] += f64::from(u8::from(v[a] != 0.0));
                }
            }
        }
    }
    for x in 0..n_x {
        for b in 0..sel[x].len() {
            for a in 0..a_n {
                let mean = sum[x][b][a] / n as f64;
                let want = exact.cumulative(x, a);
                // With few nonzero samples the sample variance is unreliable; fall
                // back to E[X²] ≤ E[X]·max X with max X = H / S from the cap.
                let var = if hits[x][b][a] >= 100.0 {
                    sq[x][b][a] / n as f64 - mean * mean
                } else if sel[x][b] > 0.0 {
                    want * h / sel[x][b]
                } else {
                    0.0
                };
                let se = (var.max(0.0) / n as f64).sqrt();
                out.cells += 1;
                if se > 0.0 {
                    out.worst_z = out.worst_z.max((mean - want).abs() / se);
                }
                if (mean - want).abs() > 4.0 * se + 1e-12 {
                    out.failures.push(format!("x={x} b={b} a={a}: {mean} vs {want} (se {se})"));
                }
            }
        }
    }
    out
}
