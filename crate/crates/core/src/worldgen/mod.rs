//! Synthetic bundle world: items grouped into intent pools, sessions with
//! planted bundles, chronological splits and the oracle teacher.

mod knowledge;
mod sessions;
mod templates;
mod world;

pub use knowledge::{
    load_knowledge_jsonl, oracle_distill_fine_grained, oracle_distill_high_level, write_knowledge_jsonl,
    KnowledgeKind, KnowledgeRecord, KnowledgeStore, TokenAliases,
};
pub use sessions::{
    generate_sessions, read_sessions_jsonl, split_chronological, write_sessions_jsonl, Bundle, Session,
    SessionItem, Splits,
};
pub use templates::{emit_prompt_templates, FINE_GRAINED_TEMPLATE, HIGH_LEVEL_TEMPLATE};
pub use world::{generate_world, IntentPool, Item, World, WorldConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("need at least 10 sessions to split, got {0}")]
    TooFewSessions(usize),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Token string for rule `j` (0 = minimum bundle size, 1 = intent alignment,
/// 2.. = compatible category pairs).
pub fn rule_token(j: usize) -> String {
    format!("RULE_{j}")
}

pub fn intent_token(k: usize) -> String {
    format!("INTENT_{k}")
}
