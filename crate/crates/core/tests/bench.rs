mod common;

use common::*;
use kefce::bench::{
    checkpoints, containment_full_mixture, containment_game, containment_mixture, kuhn_poker, nfce_example, random_game,
    run_experiment, thinned_mixture, ExperimentConfig, GameSource, GenError, Generator, RandomGameParams, MAX_CONTAINMENT_K,
};
use kefce::eval::{kefce_gap, mixture_value};
use kefce::kefr::{episodes_per_round, run_kefr_full, Feedback};
use kefce::policy::{CorrelatedPolicy, ProductPolicy};
use kefce::TreeGame;

fn read_rows(path: &std::path::Path) -> (String, Vec<csv::StringRecord>) {
    let text = std::fs::read_to_string(path).unwrap();
    let (meta, body) = text.split_once('\n').unwrap();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["game_digest", "mode", "K", "T_checkpoint", "seed", "player", "gap", "regret", "episodes", "wall_ms"]
    );
    (meta.to_string(), rdr.records().map(Result::unwrap).collect())
}

#[test]
fn containment_generator() {
    for k in 0..=MAX_CONTAINMENT_K {
        let g = containment_game(k).unwrap();
        assert_eq!(g.horizon(), k + 1);
        assert_eq!(g.layer_size(0, k), 4usize.pow(k as u32));
        let round_trip = TreeGame::from_json(&g.to_json()).unwrap();
        assert_eq!(round_trip.digest(), g.digest());
        if k <= 2 {
            let mix = containment_mixture(&g).unwrap();
            assert!(close(mixture_value(&g, &mix, 0), 0.5, 1e-12));
        }
    }
    assert!(matches!(containment_game(MAX_CONTAINMENT_K + 1), Err(GenError::SizeGuard(_))));
}

#[test]
fn compact_and_enumerated_mirror_mixtures_agree() {
    for k in 0..=1 {
        let g = containment_game(k).unwrap();
        let compact = containment_mixture(&g).unwrap();
        let full = containment_full_mixture(&g).unwrap();
        assert!(full.is_pure_mixture());
        for budget in 0..=k + 1 {
            let a = kefce_gap(&g, &compact, budget).unwrap().gap;
            let b = kefce_gap(&g, &full, budget).unwrap().gap;
            assert!(close(a, b, 1e-12), "K={k} budget {budget}");
        }
    }
}

#[test]
fn nfce_generator() {
    let (g, mix) = nfce_example().unwrap();
    assert_eq!(g.num_players(), 2);
    assert_eq!(g.horizon(), 2);
    assert_eq!(mix.len(), 32);
    assert!(mix.is_pure_mixture());
    assert!(mix.components().iter().all(|(w, _)| *w == 1.0 / 32.0));
}

#[test]
fn kuhn_structure() {
    let g = kuhn_poker().unwrap();
    // Three private cards on the first layer for each player.
    assert_eq!(g.layer_size(0, 0), 3);
    assert_eq!(g.layer_size(1, 0), 3);
    assert_eq!(g.layer(0).len(), 6);
    assert_eq!(g.digest().hash, kuhn_poker().unwrap().digest().hash);
}

#[test]
fn kuhn_learning_baseline() {
    let g = kuhn_poker().unwrap();
    let run = run_kefr_full(&g, 1, 1 << 14, None).unwrap();
    let gap = kefce_gap(&g, &CorrelatedPolicy::uniform(run.policies).unwrap(), 1).unwrap().gap;
    assert!(gap < 0.05 * g.horizon() as f64, "gap {gap}");
    // First measurement; full-feedback runs are deterministic.
    const BASELINE: f64 = 0.015974653686327278;
    assert!((gap - BASELINE).abs() <= 1e-6, "gap {gap} drifted from {BASELINE}");
}

#[test]
fn random_games_validate_and_are_reproducible() {
    let params = RandomGameParams::default();
    for seed in 0..100 {
        let g = random_game(seed, &params).unwrap();
        let again = TreeGame::from_json(&g.to_json()).unwrap();
        assert_eq!(again.digest(), g.digest());
        assert_eq!(random_game(seed, &params).unwrap().digest(), g.digest());
    }
    let wide = RandomGameParams { players: 3, horizon: 3, actions: 3, initial_states: 3, max_branch: 3, merge_prob: 0.2 };
    for seed in 0..10 {
        let g = random_game(seed, &wide).unwrap();
        assert_eq!(g.num_players(), 3);
        assert_eq!(g.num_actions(2), 3);
    }
    let huge = RandomGameParams { horizon: 12, actions: 4, max_branch: 4, initial_states: 4, ..Default::default() };
    assert!(matches!(random_game(0, &huge), Err(GenError::SizeGuard(_))));
}

#[test]
fn checkpoint_schedule() {
    assert_eq!(checkpoints(100), vec![16, 32, 64, 100]);
    assert_eq!(checkpoints(64), vec![16, 32, 64]);
    assert_eq!(checkpoints(10), vec![10]);
}

#[test]
fn thinning() {
    let g = containment_game(1).unwrap();
    let mut r = rng(0);
    let seq: Vec<ProductPolicy> = (0..100).map(|_| ProductPolicy::random(&g, &mut r)).collect();
    assert_eq!(thinned_mixture(&seq[..10], 64, 1).unwrap().len(), 10);
    let a = thinned_mixture(&seq, 64, 1).unwrap();
    let b = thinned_mixture(&seq, 64, 1).unwrap();
    assert_eq!(a.len(), 64);
    assert_eq!(a.components(), b.components());
    assert_ne!(a.components(), thinned_mixture(&seq, 64, 2).unwrap().components());
}

#[test]
fn experiment_csv_contract() {
    let dir = tempfile::tempdir().unwrap();
    let gen = Generator::Random { seed: 3, params: RandomGameParams::default() };
    let game = gen.build().unwrap();
    let out = dir.path().join("bandit.csv");
    let mut cfg = ExperimentConfig::new(GameSource::Generator(gen), vec![0, 1, 2], 40, Feedback::Bandit, out.clone());
    cfg.seeds = vec![1, 2];
    let rows = run_experiment(&cfg).unwrap();
    let marks = checkpoints(40);
    assert_eq!(rows.len(), marks.len() * 3 * 2);
    let (meta, records) = read_rows(&out);
    assert!(meta.starts_with('#'));
    assert_eq!(records.len(), rows.len());
    for row in &rows {
        let per = episodes_per_round(game.horizon(), row.k) * game.num_players() as u64;
        assert_eq!(row.episodes, per * row.t_checkpoint as u64);
        assert_eq!(row.game_digest, game.digest().hash);
        assert_eq!(row.mode, "bandit");
        assert_eq!(row.wall_ms, 0);
        assert!(row.t_checkpoint <= 32 || close(row.regret, row.t_checkpoint as f64 * row.gap, 1e-9));
    }
    let first = std::fs::read(&out).unwrap();
    run_experiment(&cfg).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), first);

    // Same game from a file gives the same numbers.
    let path = dir.path().join("game.json");
    std::fs::write(&path, game.to_json()).unwrap();
    let out2 = dir.path().join("file.csv");
    let cfg2 = ExperimentConfig { game: GameSource::File(path), out: out2.clone(), ..cfg.clone() };
    let rows2 = run_experiment(&cfg2).unwrap();
    assert_eq!(rows.iter().map(|r| r.gap).collect::<Vec<_>>(), rows2.iter().map(|r| r.gap).collect::<Vec<_>>());
}

#[test]
fn full_feedback_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("full.csv");
    let mut cfg = ExperimentConfig::new(GameSource::Generator(Generator::Containment { k: 1 }), vec![1], 100, Feedback::Full, out.clone());
    cfg.thin = 16;
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.t_checkpoint).collect::<Vec<_>>(), vec![16, 32, 64, 100]);
    assert!(rows.iter().all(|r| r.mode == "full" && r.episodes == 0));
    // The first checkpoint fits the thinning budget, so its regret is the exact one.
    assert!(close(rows[0].regret, 16.0 * rows[0].gap, 1e-9));
}

#[test]
fn experiment_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let cfg = ExperimentConfig::new(GameSource::Generator(Generator::Kuhn), vec![], 10, Feedback::Full, out);
    assert!(run_experiment(&cfg).is_err());
    let missing = ExperimentConfig::new(
        GameSource::File(dir.path().join("nope.json")),
        vec![1],
        10,
        Feedback::Full,
        dir.path().join("y.csv"),
    );
    assert!(run_experiment(&missing).is_err());
}
