//! JSON description of a game tree.
//!
//! ```json
//! {
//!   "players": 2, "horizon": 2, "action_counts": [2, 2],
//!   "initial": [1.0],
//!   "states": [
//!     [ { "infoset": ["root", "root"],
//!         "rewards": { "0,0": [0.5, 0.0] },
//!         "next": { "0,0": 0, "0,1": 1, "1,0": [[2, 0.5], [3, 0.5]], "1,1": 4 } } ],
//!     [ ... ]
//!   ]
//! }
//! ```
//!
//! Joint actions are written as comma-separated per-player action indices.
//! Missing reward entries are zero. `next` is required for every joint action
//! except on the last layer, where it must be empty.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Top-level game document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub players: usize,
    pub horizon: usize,
    pub action_counts: Vec<usize>,
    pub initial: Vec<f64>,
    pub states: Vec<Vec<StateSpec>>,
}

/// One state of the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    /// Infoset label of this state for each player.
    pub infoset: Vec<Label>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rewards: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub next: BTreeMap<String, NextSpec>,
}

/// Successor of a (state, joint action) pair: a single state index in the
/// next layer, or a list of `[state, probability]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextSpec {
    State(usize),
    Distribution(Vec<(usize, f64)>),
}

/// Infoset labels may be integers or strings in the file; they are compared
/// as strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Int(u64),
    Str(String),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Int(n) => write!(f, "{n}"),
            Label::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::Str(s.to_string())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label::Str(s)
    }
}

pub fn joint_key(actions: &[usize]) -> String {
    let parts: Vec<String> = actions.iter().map(|a| a.to_string()).collect();
    parts.join(",")
}

pub fn parse_joint_key(key: &str) -> Option<Vec<usize>> {
    key.split(',').map(|p| p.trim().parse::<usize>().ok()).collect()
}
