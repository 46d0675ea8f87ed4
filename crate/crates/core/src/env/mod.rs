//! Bandit environments: a simulated music-recommendation world and replay
//! over labelled relational instances.

mod induce;
mod music;
mod replay;

pub use induce::{discrimination_profile, induce_contexts, template_clauses, InducedClauseSet};
pub use music::{music_knowledge, Behavior, MusicWorld, WorldConfig};
pub use replay::{
    load_replay, parse_replay, replay_candidates, ReplayDataset, ReplayEnv, ReplayInstance, BUNDLED_REPLAY,
    BUNDLED_REPLAY_KNOWLEDGE,
};

use crate::relational::ParseError;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("unknown arm `{0}`")]
    UnknownArm(String),
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("no context observed yet")]
    NotObserved,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("replay dataset has no instances")]
    Empty,
}
