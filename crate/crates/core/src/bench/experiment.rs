//! Learning experiments: run a learner per `(K, seed)` cell, evaluate gaps at
//! checkpoints, write one CSV.
//!
//! The file starts with a `#` metadata line, then the header
//! `game_digest,mode,K,T_checkpoint,seed,player,gap,regret,episodes,wall_ms`.
//! One row per cell and checkpoint: `player` is the player with the largest
//! gap, `gap` is the K-EFCE gap of the uniform mixture of `π^1..π^T` and
//! `regret` the K-EFCE regret of that prefix. When the prefix is longer than
//! the thinning limit, the gap is computed on a seeded uniform subsample and
//! `regret` is reported as `T · gap` of that subsample.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::generators::{
    containment_game, kuhn_poker, nfce_example, random_game, GenError, RandomGameParams, KUHN_CHIP_SCALE,
};
use crate::eval::{kefce_gap, kefce_regret, EvalError};
use crate::game::{GameError, TreeGame};
use crate::kefr::{run_kefr, Feedback, KefrError, LearnerConfig};
use crate::policy::{CorrelatedPolicy, PolicyError, ProductPolicy};

/// Default cap on the number of mixture components evaluated per checkpoint.
pub const DEFAULT_THIN: usize = 64;
/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "KEFCE_THREADS";
pub const CSV_HEADER: [&str; 10] =
    ["game_digest", "mode", "K", "T_checkpoint", "seed", "player", "gap", "regret", "episodes", "wall_ms"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Learner(#[from] KefrError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// A built-in game generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Generator {
    Containment { k: usize },
    Nfce,
    Kuhn,
    Random { seed: u64, params: RandomGameParams },
}

impl Generator {
    pub fn build(&self) -> Result<TreeGame, BenchError> {
        Ok(match self {
            Generator::Containment { k } => containment_game(*k)?,
            Generator::Nfce => nfce_example()?.0,
            Generator::Kuhn => kuhn_poker()?,
            Generator::Random { seed, params } => random_game(*seed, params)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GameSource {
    File(PathBuf),
    Generator(Generator),
}

impl GameSource {
    pub fn load(&self) -> Result<TreeGame, BenchError> {
        match self {
            GameSource::File(path) => Ok(TreeGame::from_json(&std::fs::read_to_string(path)?)?),
            GameSource::Generator(g) => g.build(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub game: GameSource,
    pub ks: Vec<usize>,
    pub rounds: usize,
    pub feedback: Feedback,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Per-player learning-rate override.
    pub eta: Option<Vec<f64>>,
    /// Failure probability of the bandit rate.
    pub p: f64,
    /// Maximum number of mixture components per gap evaluation.
    pub thin: usize,
    /// Fill `wall_ms`; leave off for byte-identical reruns.
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(game: GameSource, ks: Vec<usize>, rounds: usize, feedback: Feedback, out: PathBuf) -> Self {
        ExperimentConfig {
            game,
            ks,
            rounds,
            feedback,
            seeds: vec![0],
            out,
            eta: None,
            p: 0.1,
            thin: DEFAULT_THIN,
            record_wall_time: false,
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.ks.is_empty() {
            return Err(BenchError::Config("empty K list".into()));
        }
        if self.seeds.is_empty() {
            return Err(BenchError::Config("empty seed list".into()));
        }
        if self.rounds == 0 {
            return Err(BenchError::Config("T must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(BenchError::Config("thinning limit must be positive".into()));
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub game_digest: String,
    pub mode: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T_checkpoint")]
    pub t_checkpoint: usize,
    pub seed: u64,
    pub player: usize,
    pub gap: f64,
    pub regret: f64,
    pub episodes: u64,
    pub wall_ms: u64,
}

/// `16, 32, 64, …` up to `rounds`, plus `rounds` itself.
pub fn checkpoints(rounds: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(16usize), |t| t.checked_mul(2)).take_while(|&t| t <= rounds).collect();
    if out.last() != Some(&rounds) {
        out.push(rounds);
    }
    out
}

/// Seed of the subsample drawn for checkpoint `t` of cell `(k, seed)`.
pub fn thinning_seed(seed: u64, k: usize, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((k as u64) << 48) ^ t as u64
}

/// The evaluated mixture for a prefix: all policies, or `thin` of them drawn
/// uniformly without replacement (kept in round order).
pub fn thinned_mixture(prefix: &[ProductPolicy], thin: usize, subsample_seed: u64) -> Result<CorrelatedPolicy, PolicyError> {
    if prefix.len() <= thin {
        return CorrelatedPolicy::uniform(prefix.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subsample_seed);
    let mut idx = sample(&mut rng, prefix.len(), thin).into_vec();
    idx.sort_unstable();
    CorrelatedPolicy::uniform(idx.into_iter().map(|i| prefix[i].clone()).collect())
}

fn run_cell(game: &TreeGame, cfg: &ExperimentConfig, digest: &str, k: usize, seed: u64) -> Result<Vec<ResultRow>, BenchError> {
    let marks = checkpoints(cfg.rounds);
    let learner = LearnerConfig {
        k,
        rounds: cfg.rounds,
        feedback: cfg.feedback,
        eta: cfg.eta.clone(),
        p: cfg.p,
        seed,
        loss_cap: None,
    };
    let mut stamps = Vec::with_capacity(marks.len());
    let start = Instant::now();
    let mut next = 0;
    let run = run_kefr(game, &learner, |info| {
        if next < marks.len() && info.round == marks[next] {
            stamps.push((info.episodes, start.elapsed().as_millis() as u64));
            next += 1;
        }
    })?;
    let mut rows = Vec::with_capacity(marks.len());
    for (&t, &(episodes, wall)) in marks.iter().zip(&stamps) {
        let prefix = &run.policies[..t];
        let mix = thinned_mixture(prefix, cfg.thin, thinning_seed(seed, k, t))?;
        let report = kefce_gap(game, &mix, k)?;
        let regret = if t <= cfg.thin { kefce_regret(game, prefix, k)? } else { t as f64 * report.gap };
        rows.push(ResultRow {
            game_digest: digest.to_string(),
            mode: cfg.feedback.as_str().to_string(),
            k,
            t_checkpoint: t,
            seed,
            player: report.player,
            gap: report.gap,
            regret,
            episodes,
            wall_ms: if cfg.record_wall_time { wall } else { 0 },
        });
    }
    Ok(rows)
}

fn worker_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

fn metadata_line(game: &TreeGame, cfg: &ExperimentConfig) -> String {
    let mut parts = vec![
        format!("game_hash={}", game.digest().hash),
        format!("mode={}", cfg.feedback.as_str()),
        format!("T={}", cfg.rounds),
        format!("thin={}", cfg.thin),
        "thin_seed=seed*0x9E3779B97F4A7C15^(K<<48)^T".to_string(),
    ];
    if cfg.feedback == Feedback::Bandit {
        parts.push(format!("p={}", cfg.p));
    }
    if let Some(eta) = &cfg.eta {
        parts.push(format!("eta={eta:?}"));
    }
    if matches!(cfg.game, GameSource::Generator(Generator::Kuhn)) {
        parts.push(format!("kuhn_chip_scale={KUHN_CHIP_SCALE}"));
    }
    format!("# {}", parts.join(" "))
}

fn write_csv(path: &PathBuf, meta: &str, rows: &[ResultRow]) -> Result<(), BenchError> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{meta}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every `(K, seed)` cell in parallel and writes the sorted rows.
///
/// If a cell fails, the rows of the finished cells are still written before
/// the first error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, BenchError> {
    cfg.validate()?;
    let game = cfg.game.load()?;
    let digest = game.digest().hash;
    let cells: Vec<(usize, u64)> = cfg.ks.iter().flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s))).collect();
    let done = Mutex::new(Vec::new());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| BenchError::Pool(e.to_string()))?;
    let outcome: Result<(), BenchError> = pool.install(|| {
        cells.par_iter().try_for_each(|&(k, seed)| {
            let rows = run_cell(&game, cfg, &digest, k, seed)?;
            done.lock().expect("collector poisoned").extend(rows);
            Ok(())
        })
    });
    let mut rows = done.into_inner().expect("collector poisoned");
    rows.sort_by_key(|r| (r.k, r.seed, r.t_checkpoint));
    write_csv(&cfg.out, &metadata_line(&game, cfg), &rows)?;
    outcome.map(|_| rows)
}
