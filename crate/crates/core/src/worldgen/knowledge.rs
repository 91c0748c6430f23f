use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{intent_token, rule_token, Session, World, WorldError};
use crate::backbone::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnowledgeKind {
    #[serde(rename = "high-level")]
    HighLevel,
    #[serde(rename = "fine-grained")]
    FineGrained,
}

/// One line of `knowledge.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub kind: KnowledgeKind,
    pub session_id: Option<u64>,
    pub payload: Vec<String>,
}

/// Maps tokens produced by an external teacher onto vocabulary tokens.
pub type TokenAliases = HashMap<String, String>;

/// Global rules plus per-session reasoning, ready for serialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnowledgeStore {
    pub rules: Vec<String>,
    pub reasoning: BTreeMap<u64, Vec<String>>,
}

impl KnowledgeStore {
    pub fn from_records(records: &[KnowledgeRecord]) -> Self {
        let mut store = Self::default();
        for r in records {
            match r.kind {
                KnowledgeKind::HighLevel => store.rules.extend(r.payload.iter().cloned()),
                KnowledgeKind::FineGrained => {
                    if let Some(id) = r.session_id {
                        store.reasoning.entry(id).or_default().extend(r.payload.iter().cloned());
                    }
                }
            }
        }
        store
    }

    pub fn reasoning_for(&self, session_id: u64) -> Option<&[String]> {
        self.reasoning.get(&session_id).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty() && self.reasoning.is_empty()
    }
}

/// Complete rule set of the world: minimum size, intent alignment, then one
/// rule per compatible category pair. One global record per rule.
pub fn oracle_distill_high_level(world: &World) -> Vec<KnowledgeRecord> {
    let mut rules = vec![0, 1];
    rules.extend(world.compatible_pairs().into_iter().map(|(a, b)| world.config.pair_rule(a, b)));
    rules
        .into_iter()
        .map(|j| KnowledgeRecord {
            kind: KnowledgeKind::HighLevel,
            session_id: None,
            payload: vec![rule_token(j)],
        })
        .collect()
}

/// The session's true intents, ascending.
pub fn oracle_distill_fine_grained(session: &Session) -> KnowledgeRecord {
    let mut intents = session.intents.clone();
    intents.sort_unstable();
    intents.dedup();
    KnowledgeRecord {
        kind: KnowledgeKind::FineGrained,
        session_id: Some(session.session_id),
        payload: intents.into_iter().map(intent_token).collect(),
    }
}

pub fn write_knowledge_jsonl(path: &Path, records: &[KnowledgeRecord]) -> Result<(), WorldError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| WorldError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates externally distilled knowledge. Tokens must exist in
/// `vocab`, either directly or through `aliases`.
pub fn load_knowledge_jsonl(
    path: &Path,
    vocab: &Vocab,
    aliases: &TokenAliases,
) -> Result<Vec<KnowledgeRecord>, WorldError> {
    let reader = BufReader::new(File::open(path)?);
    let fail = |line: usize, message: String| WorldError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: KnowledgeRecord =
            serde_json::from_str(&line).map_err(|e| fail(lineno, format!("schema violation: {e}")))?;
        match (record.kind, record.session_id) {
            (KnowledgeKind::FineGrained, None) => {
                return Err(fail(lineno, "fine-grained record without session_id".into()))
            }
            (KnowledgeKind::HighLevel, Some(_)) => {
                return Err(fail(lineno, "high-level record must be global (no session_id)".into()))
            }
            _ => {}
        }
        for token in record.payload.iter_mut() {
            if vocab.id(token).is_some() {
                continue;
            }
            match aliases.get(token.as_str()) {
                Some(mapped) if vocab.id(mapped).is_some() => *token = mapped.clone(),
                _ => return Err(fail(lineno, format!("unknown token {token:?}"))),
            }
        }
        records.push(record);
    }
    if records.is_empty() {
        log::warn!("{}: no knowledge records", path.display());
    }
    Ok(records)
}
