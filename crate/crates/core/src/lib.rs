//! Learning K-deviation correlated equilibria in tree-structured games.
//!
//! The crate is organized bottom-up:
//!
//! * [`game`]: the tree game model, JSON format, exact reach and loss passes, simulation.
//! * [`policy`]: behavioral, product and correlated policies.
//! * [`deviation`]: recommendation histories and strategy modifications.
//! * [`regret`]: the wide-range regret minimizer used at each infoset.
//! * [`kefr`]: the full-feedback and bandit learning loops.
//! * [`eval`]: exact gap and regret computations.
//! * [`bench`]: game generators and the experiment runner.

// Layer, state and infoset ids double as indices into several parallel tables.
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod deviation;
pub mod eval;
pub mod game;
pub mod kefr;
pub mod policy;
pub mod regret;

pub use deviation::DeviationError;
pub use game::{GameError, TreeGame};
pub use policy::PolicyError;
