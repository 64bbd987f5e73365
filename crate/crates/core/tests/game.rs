mod common;

use common::*;
use kefce::bench::{containment_game, containment_mixture, kuhn_poker, random_game, RandomGameParams};
use kefce::game::{
    counterfactual_losses, marginal_reach, marginal_reach_all, play_episode, sequence_form, sequence_form_range, value,
    GameError,
};
use kefce::policy::{BehavioralPolicy, ProductPolicy};
use kefce::TreeGame;
use proptest::prelude::*;

/// Probability of reaching each state from chance and the opponents of `me`.
fn others_reach(game: &TreeGame, profile: &ProductPolicy, me: usize) -> Vec<Vec<f64>> {
    let mut reach: Vec<Vec<f64>> = vec![game.initial().to_vec()];
    for h in 1..game.horizon() {
        let row = (0..game.layer(h).len())
            .map(|s| {
                let (ps, joint) = game.state(h, s).parent.expect("non-root state has a parent");
                let parent = game.state(h - 1, ps);
                let acts = game.joint_actions(joint);
                let opp: f64 = (0..game.num_players())
                    .filter(|&j| j != me)
                    .map(|j| profile.player(j).prob(parent.infosets[j], acts[j]))
                    .product();
                let trans: f64 = parent.next[joint].iter().filter(|&&(c, _)| c == s).map(|&(_, p)| p).sum();
                reach[h - 1][ps] * opp * trans
            })
            .collect();
        reach.push(row);
    }
    reach
}

/// Expected future loss at `(h, s)` when `me` plays `forced` now and then follows the profile.
fn forced_continuation(game: &TreeGame, profile: &ProductPolicy, me: usize, h: usize, s: usize, forced: Option<usize>) -> f64 {
    let node = game.state(h, s);
    let mut total = 0.0;
    for joint in 0..game.num_joint() {
        let acts = game.joint_actions(joint);
        let mut p = 1.0;
        for (j, &act) in acts.iter().enumerate() {
            p *= match (j == me, forced) {
                (true, Some(a)) => (act == a) as u8 as f64,
                _ => profile.player(j).prob(node.infosets[j], act),
            };
        }
        if p == 0.0 {
            continue;
        }
        let mut v = 1.0 - game.reward(h, s, joint, me);
        if h + 1 < game.horizon() {
            v += node.next[joint].iter().map(|&(c, q)| q * forced_continuation(game, profile, me, h + 1, c, None)).sum::<f64>();
        }
        total += p * v;
    }
    total
}

fn forced_loss(game: &TreeGame, profile: &ProductPolicy, me: usize, x: usize, a: usize) -> f64 {
    let reach = others_reach(game, profile, me);
    let info = game.infoset(me, x);
    info.states.iter().map(|&s| reach[info.layer][s] * forced_continuation(game, profile, me, info.layer, s, Some(a))).sum()
}

#[test]
fn smallest_game_is_valid() {
    let g = bandit(&[0.2, 0.9]);
    assert_eq!(g.num_infosets(0), 1);
    assert_eq!(g.layer_size(0, 0), 1);
}

#[test]
fn containment_layer_two_has_four_infosets() {
    let g = containment_game(1).unwrap();
    assert_eq!(g.horizon(), 2);
    assert_eq!(g.layer_size(0, 1), 4);
    assert_eq!(g.layer_size(1, 1), 4);
}

#[test]
fn merged_siblings_violate_recall() {
    let g = containment_game(1).unwrap();
    let mut spec = g.to_spec();
    // States 0 and 1 of the second layer differ in the first player's own action.
    spec.states[1][1].infoset[0] = spec.states[1][0].infoset[0].clone();
    match TreeGame::from_spec(&spec) {
        Err(GameError::RecallViolation(_)) => {}
        other => panic!("expected a recall violation, got {other:?}"),
    }
}

#[test]
fn bad_probabilities_rejected() {
    let g = containment_game(1).unwrap();
    let mut spec = g.to_spec();
    spec.initial = vec![0.9];
    assert!(matches!(TreeGame::from_spec(&spec), Err(GameError::StochasticityError(_))));
}

#[test]
fn reward_out_of_range_rejected() {
    let json = serde_json::json!({
        "players": 1, "horizon": 1, "action_counts": [2], "initial": [1.0],
        "states": [[ { "infoset": ["r"], "rewards": { "0": [1.5] } } ]]
    });
    assert!(matches!(TreeGame::from_json(&json.to_string()), Err(GameError::RewardRange(_))));
}

#[test]
fn two_parents_rejected() {
    let json = serde_json::json!({
        "players": 1, "horizon": 2, "action_counts": [2], "initial": [1.0],
        "states": [
            [ { "infoset": ["r"], "next": { "0": 0, "1": 0 } } ],
            [ { "infoset": ["c"] } ]
        ]
    });
    assert!(matches!(TreeGame::from_json(&json.to_string()), Err(GameError::TreeViolation(_))));
}

#[test]
fn json_round_trip_keeps_digest() {
    let g = kuhn_poker().unwrap();
    let again = TreeGame::from_json(&g.to_json()).unwrap();
    assert_eq!(g.digest(), again.digest());
}

#[test]
fn uniform_sequence_form_at_third_layer() {
    let g = containment_game(2).unwrap();
    let pi = BehavioralPolicy::uniform(&g, 0);
    let x = g.infosets_in_layer(0, 2).start;
    assert!(close(sequence_form(&g, &pi, x, 1), 0.125, 1e-15));
}

#[test]
fn pure_sequence_form_is_an_indicator() {
    let g = containment_game(2).unwrap();
    let x = g.infosets_in_layer(0, 2).start + 3;
    let info = g.infoset(0, x).clone();
    let mut matching = vec![0; g.num_infosets(0)];
    for &(y, a) in &info.history {
        matching[y] = a;
    }
    let pi = BehavioralPolicy::pure(&g, 0, &matching);
    assert_eq!(sequence_form(&g, &pi, x, 0), 1.0);
    let (y0, a0) = info.history[0];
    let mut off = matching.clone();
    off[y0] = 1 - a0;
    let pi = BehavioralPolicy::pure(&g, 0, &off);
    assert_eq!(sequence_form(&g, &pi, x, 0), 0.0);
    assert_eq!(sequence_form_range(&g, &pi, x, 0, 1), 1.0);
}

#[test]
fn single_root_reach_is_one() {
    let g = bandit(&[0.3, 0.4, 0.5]);
    let p = ProductPolicy::uniform(&g);
    assert_eq!(marginal_reach(&g, &p, 0, 0), 1.0);
}

#[test]
fn reach_against_uniform_opponent_is_half() {
    let g = two_by_two([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]]);
    let p = ProductPolicy::uniform(&g);
    for x in g.infosets_in_layer(0, 1) {
        assert!(close(marginal_reach(&g, &p, 0, x), 0.5, 1e-15));
    }
}

#[test]
fn zero_rewards_give_zero_value() {
    let g = bandit(&[0.0, 0.0]);
    assert_eq!(value(&g, &ProductPolicy::uniform(&g), 0), 0.0);
}

#[test]
fn mirror_component_value_is_half() {
    let g = containment_game(1).unwrap();
    let mix = containment_mixture(&g).unwrap();
    for (_, comp) in mix.components() {
        assert!(close(value(&g, comp, 0), 0.5, 1e-12));
    }
}

#[test]
fn kuhn_uniform_value() {
    // Under uniform play the only chip flows not cancelled by card symmetry
    // are folds: bet-fold (+1, prob 1/4) and check-bet-fold (-1, prob 1/8).
    let expected_chips = 0.25 - 0.125;
    let expected = (2.0 + expected_chips) / 4.0;
    let g = kuhn_poker().unwrap();
    let v = value(&g, &ProductPolicy::uniform(&g), 0);
    assert!(close(v, expected, 1e-12), "{v}");
    assert!(close(v, 17.0 / 32.0, 1e-12));
}

#[test]
fn one_step_losses_match_the_formula() {
    let g = two_by_two([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]]);
    let g1 = {
        let mut spec = g.to_spec();
        spec.horizon = 1;
        spec.states.truncate(1);
        spec.states[0][0].next.clear();
        spec.states[0][0].rewards.insert("0,0".into(), vec![0.25, 0.0]);
        spec.states[0][0].rewards.insert("1,0".into(), vec![1.0, 0.0]);
        TreeGame::from_spec(&spec).unwrap()
    };
    let mut r = rng(3);
    let p = ProductPolicy::random(&g1, &mut r);
    let loss = counterfactual_losses(&g1, &p, 0);
    let q0 = p.player(1).prob(0, 0);
    let q1 = 1.0 - q0;
    assert!(close(loss.cumulative(0, 0), q0 * 0.75 + q1, 1e-15));
    assert!(close(loss.cumulative(0, 1), q1, 1e-15));
}

#[test]
fn full_reward_gives_zero_loss() {
    let g = bandit(&[1.0, 1.0]);
    let loss = counterfactual_losses(&g, &ProductPolicy::uniform(&g), 0);
    assert_eq!(loss.cumulative_row(0), &[0.0, 0.0]);
}

#[test]
fn kuhn_losses_match_forced_traversal() {
    let g = kuhn_poker().unwrap();
    let p = ProductPolicy::random(&g, &mut rng(11));
    for me in 0..2 {
        let loss = counterfactual_losses(&g, &p, me);
        for x in 0..g.num_infosets(me) {
            for a in 0..2 {
                let want = forced_loss(&g, &p, me, x, a);
                assert!(close(loss.cumulative(x, a), want, 1e-12), "player {me} x {x} a {a}");
            }
        }
    }
}

#[test]
fn deterministic_game_pure_policy_unique_path() {
    let g = containment_game(2).unwrap();
    let p = ProductPolicy::new(vec![BehavioralPolicy::pure(&g, 0, &vec![1; g.num_infosets(0)]), BehavioralPolicy::pure(&g, 1, &vec![0; g.num_infosets(1)])]);
    let a = play_episode(&g, &p, &mut rng(1));
    let b = play_episode(&g, &p, &mut rng(2));
    assert_eq!(a.states, b.states);
    assert!(a.views[0].iter().all(|s| s.action == 1));
    assert_eq!(a.total_reward(0), 1.0);
}

#[test]
fn monte_carlo_value_and_visits() {
    let g = random_game(5, &RandomGameParams { horizon: 3, initial_states: 3, max_branch: 2, ..Default::default() }).unwrap();
    let mut r = rng(8);
    let p = ProductPolicy::random(&g, &mut r);
    let n = 100_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut visits = vec![0usize; g.num_infosets(0)];
    for _ in 0..n {
        let t = play_episode(&g, &p, &mut r);
        let v = t.total_reward(0);
        sum += v;
        sq += v * v;
        for s in &t.views[0] {
            visits[s.infoset] += 1;
        }
    }
    let mean = sum / n as f64;
    let sd = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - value(&g, &p, 0)).abs() <= 4.0 * sd + 1e-12);
    let reach = marginal_reach_all(&g, &p, 0);
    let own = p.player(0);
    for x in 0..g.num_infosets(0) {
        let info = g.infoset(0, x);
        let own_reach: f64 = info.history.iter().map(|&(y, a)| own.prob(y, a)).product();
        let q = reach[x] * own_reach;
        let freq = visits[x] as f64 / n as f64;
        let se = (q * (1.0 - q) / n as f64).sqrt();
        assert!((freq - q).abs() <= 4.0 * se + 1e-12, "infoset {x}: {freq} vs {q}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn reach_weighted_sequence_forms_sum_to_one(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let params = RandomGameParams { horizon: 3, initial_states: 2, max_branch: 2, ..Default::default() };
        let g = random_game(seed, &params).unwrap();
        let p = ProductPolicy::random(&g, &mut r);
        for me in 0..2 {
            let reach = marginal_reach_all(&g, &p, me);
            for h in 0..g.horizon() {
                let total: f64 = g
                    .infosets_in_layer(me, h)
                    .flat_map(|x| (0..2).map(move |a| (x, a)))
                    .map(|(x, a)| sequence_form(&g, p.player(me), x, a) * reach[x])
                    .sum();
                prop_assert!((total - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn loss_bounds_hold(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let params = RandomGameParams { horizon: 3, initial_states: 2, max_branch: 2, ..Default::default() };
        let g = random_game(seed, &params).unwrap();
        let p = ProductPolicy::random(&g, &mut r);
        let horizon = g.horizon();
        for me in 0..2 {
            let loss = counterfactual_losses(&g, &p, me);
            let reach = marginal_reach_all(&g, &p, me);
            for h in 0..horizon {
                let mut weighted = 0.0;
                let mut weighted_step = 0.0;
                for x in g.infosets_in_layer(me, h) {
                    for a in 0..2 {
                        let l = loss.cumulative(x, a);
                        prop_assert!(l >= 0.0 && l <= reach[x] * (horizon - h) as f64 + 1e-12);
                        let sf = sequence_form(&g, p.player(me), x, a);
                        weighted += sf * l;
                        weighted_step += sf * loss.immediate(x, a);
                    }
                }
                prop_assert!(weighted <= (horizon - h) as f64 + 1e-12);
                prop_assert!(weighted_step <= 1.0 + 1e-12);
            }
        }
    }
}
