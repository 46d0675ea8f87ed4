//! Experiment protocol: seeded repetitions of algorithm x environment x
//! knowledge-quality grids, regret CSVs and summary tables.

mod compare;
mod output;
mod run;
mod spec;

pub use compare::{compare, fraction_below, CompareRow, CompareTable};
pub use output::{
    read_curves, read_mean_csv, read_run_csv, validate_file, write_mean_csv, write_run_csv, FileKind, MeanRow, RunRow,
    MEAN_SCHEMA, RUN_SCHEMA,
};
pub use run::{mean_curve, run_experiment, write_outputs, AlgorithmTrace, ExperimentOutcome, RegretTrace};
pub use spec::{EnvironmentSpec, ExperimentSpec, KnowledgeQuality, OUTPUT_DIR_ENV};

use crate::engine::EngineError;
use crate::env::EnvError;
use crate::knowledge::KnowledgeError;
use crate::relational::ParseError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("cannot load environment: {0}")]
    Env(#[from] EnvError),
    #[error("knowledge file {path}: {source}")]
    Knowledge {
        path: String,
        #[source]
        source: KnowledgeError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error("{path}: line {line}: {msg}")]
    Schema { path: String, line: usize, msg: String },
    #[error("traces disagree on the number of steps: {0}")]
    Mismatch(String),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 when an
    /// environment or its knowledge cannot be loaded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Engine(EngineError::Config(_)) => 2,
            HarnessError::Env(_) | HarnessError::Knowledge { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
