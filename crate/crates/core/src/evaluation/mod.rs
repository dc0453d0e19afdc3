//! Characteristic functions from task outcomes, and the evaluation loop that
//! produces those outcomes through an external evaluator.

pub mod adapter;
pub mod cache;
pub mod records;
pub mod run;

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::game::GameError;
use crate::simulator::SimError;

pub use adapter::{AdapterKind, EvaluatorAdapter};
pub use cache::{task_fingerprint, CacheKey, CoalitionCache};
pub use records::{
    build_game_from_records, parse_records, resolve_outcomes, CoalitionOutcome, FailurePolicy,
    TaskOutcomeRecord, TaskResponse,
};
pub use run::{
    evaluate_coalition, run_attribution, ProgressManifest, RunError, RunOptions, RunOutput,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no task outcome records")]
    EmptyRecords,
    #[error("task list is empty")]
    NoTasks,
    #[error("duplicate record for task {task_id:?} under coalition mask {mask}")]
    DuplicateRecord { task_id: String, mask: u64 },
    #[error(
        "coalition mask {mask} was evaluated on a different task set (missing: {missing:?}, extra: {extra:?})"
    )]
    InconsistentTasks {
        mask: u64,
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("score {score} for task {task_id:?} is outside [0, 1]")]
    ScoreOutOfRange { task_id: String, score: f64 },
    #[error("records line {line}: {reason}")]
    RecordsFormat { line: usize, reason: String },
    #[error("evaluator protocol error for coalition mask {mask}: {reason} in line {line:?}")]
    Protocol {
        mask: u64,
        line: String,
        reason: String,
    },
    #[error(
        "evaluator failed for coalition mask {mask} after {attempts} attempt(s): {message} (tasks: {})",
        summarize_tasks(.failed_tasks)
    )]
    Transport {
        mask: u64,
        failed_tasks: Vec<String>,
        attempts: u32,
        message: String,
    },
    #[error("invalid evaluator configuration: {0}")]
    Config(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn summarize_tasks(tasks: &[String]) -> String {
    const SHOWN: usize = 8;
    let mut s = tasks
        .iter()
        .take(SHOWN)
        .cloned()
        .collect::<Vec<_>>()
        .join(", ");
    if tasks.len() > SHOWN {
        s.push_str(&format!(", ... ({} total)", tasks.len()));
    }
    s
}
