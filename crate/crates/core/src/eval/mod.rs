//! Session-level precision, recall and coverage, corpus aggregation and
//! strategy comparison tables.

mod compare;
mod metrics;

pub use compare::{compare_strategies, split_fingerprint, Comparison, ComparisonRow, Delta, RunReport};
pub use metrics::{aggregate, match_hits, session_metrics, Hit, MetricsReport, SessionResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("session {0} has no ground-truth bundles")]
    EmptyTruth(u64),
    #[error("no sessions to aggregate")]
    NoSessions,
    #[error("at least two runs are needed, got {0}")]
    TooFewRuns(usize),
    #[error("run {run} was evaluated on a different split ({found} vs {expected})")]
    SplitMismatch { run: String, expected: String, found: String },
    #[error("baseline run {0} not found")]
    UnknownBaseline(String),
    #[error("duplicate run name {0}")]
    DuplicateRun(String),
}
