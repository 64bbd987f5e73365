//! Game generators and the experiment runner.

pub mod experiment;
pub mod generators;

pub use experiment::{
    checkpoints, run_experiment, thinned_mixture, BenchError, ExperimentConfig, GameSource, Generator, ResultRow,
    DEFAULT_THIN, THREADS_ENV,
};
pub use generators::{
    containment_full_mixture, containment_game, containment_mixture, kuhn_poker, nfce_example, random_game, random_mixture,
    GenError, RandomGameParams, KUHN_CHIP_SCALE, MAX_CONTAINMENT_K, MAX_RANDOM_STATES,
};
