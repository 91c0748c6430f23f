use serde::{Deserialize, Serialize};

use super::vocab::{B_CLOSE, B_OPEN, BOS, EOS, KF, KH, SEP};
use super::{BackboneError, Vocab};
use crate::worldgen::{KnowledgeStore, Session};

/// Which knowledge, if any, is injected ahead of the item list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputVariant {
    Raw,
    High,
    Fine,
    Merged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SerializedInput {
    pub tokens: Vec<usize>,
    pub prompt_len: usize,
    pub variant: InputVariant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSequence {
    pub tokens: Vec<usize>,
    pub permutation_index: usize,
}

/// Builds the prompt for one session. `knowledge` must be given exactly when
/// the variant injects knowledge.
pub fn serialize_session(
    session: &Session,
    variant: InputVariant,
    knowledge: Option<&KnowledgeStore>,
    vocab: &Vocab,
) -> Result<SerializedInput, BackboneError> {
    let mut tokens = vec![BOS];
    let lookup_all = |tokens: &mut Vec<usize>, list: &[String]| -> Result<(), BackboneError> {
        for t in list {
            tokens.push(vocab.lookup(t)?);
        }
        Ok(())
    };
    let store = match (variant, knowledge) {
        (InputVariant::Raw, None) => None,
        (InputVariant::Raw, Some(_)) => return Err(BackboneError::UnexpectedKnowledge),
        (_, None) => return Err(BackboneError::MissingKnowledge(session.session_id)),
        (_, Some(k)) => Some(k),
    };
    if let Some(store) = store {
        if matches!(variant, InputVariant::High | InputVariant::Merged) {
            if store.rules.is_empty() {
                return Err(BackboneError::MissingKnowledge(session.session_id));
            }
            tokens.push(KH);
            lookup_all(&mut tokens, &store.rules)?;
        }
        if matches!(variant, InputVariant::Fine | InputVariant::Merged) {
            let reasoning = store
                .reasoning_for(session.session_id)
                .ok_or(BackboneError::MissingKnowledge(session.session_id))?;
            tokens.push(KF);
            lookup_all(&mut tokens, reasoning)?;
        }
        tokens.push(SEP);
    }
    for item in &session.items {
        tokens.push(vocab.item(item.id)?);
        tokens.push(vocab.category(item.category)?);
    }
    tokens.push(SEP);
    let prompt_len = tokens.len();
    Ok(SerializedInput { tokens, prompt_len, variant })
}

/// Bundles with items ascending and bundles ordered lexicographically.
pub fn canonical_bundles(bundles: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = bundles
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.sort_unstable();
            b
        })
        .collect();
    out.sort();
    out
}

fn factorial(n: usize) -> usize {
    (1..=n).fold(1usize, |acc, k| acc.saturating_mul(k))
}

/// The `index`-th permutation of `0..n` in lexicographic order.
pub fn nth_permutation(n: usize, mut index: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for remaining in (1..=n).rev() {
        let block = factorial(remaining - 1);
        let pick = index / block;
        index %= block;
        out.push(pool.remove(pick));
    }
    out
}

/// Number of distinct bundle orders used for training: `min(M!, p_max)`.
pub fn permutation_count(bundles: usize, p_max: usize) -> usize {
    factorial(bundles).min(p_max).max(1)
}

/// Target text for the canonical bundles arranged by the given permutation.
pub fn serialize_bundles(
    bundles: &[Vec<usize>],
    permutation_index: usize,
    vocab: &Vocab,
) -> Result<TargetSequence, BackboneError> {
    if let Some(b) = bundles.iter().find(|b| b.len() < 2) {
        return Err(BackboneError::BundleTooSmall(b.len()));
    }
    if permutation_index >= factorial(bundles.len()) {
        return Err(BackboneError::Permutation { index: permutation_index, bundles: bundles.len() });
    }
    let canonical = canonical_bundles(bundles);
    let mut tokens = Vec::new();
    for i in nth_permutation(canonical.len(), permutation_index) {
        tokens.push(B_OPEN);
        for &item in &canonical[i] {
            tokens.push(vocab.item(item)?);
        }
        tokens.push(B_CLOSE);
    }
    tokens.push(EOS);
    Ok(TargetSequence { tokens, permutation_index })
}

/// All training targets for a session: one per permutation up to `p_max`.
pub fn target_permutations(
    bundles: &[Vec<usize>],
    p_max: usize,
    vocab: &Vocab,
) -> Result<Vec<TargetSequence>, BackboneError> {
    (0..permutation_count(bundles.len(), p_max))
        .map(|p| serialize_bundles(bundles, p, vocab))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_vocab, VocabSpec};
    use crate::worldgen::SessionItem;

    fn vocab() -> Vocab {
        build_vocab(&VocabSpec { items: 10, categories: 2, intents: 5, rules: 3 }, 1000).unwrap()
    }

    fn session() -> Session {
        Session {
            session_id: 9,
            ts: 1,
            items: vec![
                SessionItem { id: 7, title: vec![], category: 1 },
                SessionItem { id: 2, title: vec![], category: 0 },
            ],
            bundles: vec![vec![2, 7]],
            intents: vec![0],
        }
    }

    fn store() -> KnowledgeStore {
        let mut k = KnowledgeStore { rules: vec!["RULE_0".into()], ..Default::default() };
        k.reasoning.insert(9, vec!["INTENT_3".into()]);
        k
    }

    #[test]
    fn raw_and_high_layouts() {
        let v = vocab();
        let item = |i| v.item(i).unwrap();
        let cat = |c| v.category(c).unwrap();
        let raw = serialize_session(&session(), InputVariant::Raw, None, &v).unwrap();
        assert_eq!(raw.tokens, vec![BOS, item(7), cat(1), item(2), cat(0), SEP]);
        assert_eq!(raw.prompt_len, raw.tokens.len());
        let high = serialize_session(&session(), InputVariant::High, Some(&store()), &v).unwrap();
        let rule0 = v.id("RULE_0").unwrap();
        assert_eq!(high.tokens, vec![BOS, KH, rule0, SEP, item(7), cat(1), item(2), cat(0), SEP]);
    }

    #[test]
    fn merged_is_high_block_then_fine_block() {
        let v = vocab();
        let k = store();
        let high = serialize_session(&session(), InputVariant::High, Some(&k), &v).unwrap();
        let fine = serialize_session(&session(), InputVariant::Fine, Some(&k), &v).unwrap();
        let merged = serialize_session(&session(), InputVariant::Merged, Some(&k), &v).unwrap();
        // high = BOS KH rules SEP items SEP ; fine = BOS KF reasoning SEP items SEP
        let high_block = &high.tokens[1..3];
        let fine_block = &fine.tokens[1..3];
        let mut expected = vec![BOS];
        expected.extend_from_slice(high_block);
        expected.extend_from_slice(fine_block);
        expected.extend_from_slice(&high.tokens[3..]);
        assert_eq!(merged.tokens, expected);
    }

    #[test]
    fn knowledge_contract() {
        let v = vocab();
        assert!(matches!(
            serialize_session(&session(), InputVariant::Raw, Some(&store()), &v),
            Err(BackboneError::UnexpectedKnowledge)
        ));
        assert!(serialize_session(&session(), InputVariant::Fine, None, &v).is_err());
        let mut s = session();
        s.items[0].id = 99;
        assert!(matches!(
            serialize_session(&s, InputVariant::Raw, None, &v),
            Err(BackboneError::UnknownToken(_))
        ));
    }

    #[test]
    fn bundle_targets() {
        let v = vocab();
        let item = |i| v.item(i).unwrap();
        let t = serialize_bundles(&[vec![3, 1], vec![5, 2]], 0, &v).unwrap();
        assert_eq!(
            t.tokens,
            vec![B_OPEN, item(1), item(3), B_CLOSE, B_OPEN, item(2), item(5), B_CLOSE, EOS]
        );
        let t1 = serialize_bundles(&[vec![3, 1], vec![5, 2]], 1, &v).unwrap();
        assert_eq!(
            t1.tokens,
            vec![B_OPEN, item(2), item(5), B_CLOSE, B_OPEN, item(1), item(3), B_CLOSE, EOS]
        );
        assert!(matches!(serialize_bundles(&[vec![1]], 0, &v), Err(BackboneError::BundleTooSmall(1))));
        assert!(serialize_bundles(&[vec![1, 2]], 1, &v).is_err());
    }

    #[test]
    fn permutation_cap() {
        let v = vocab();
        let targets = target_permutations(&[vec![0, 1], vec![2, 3], vec![4, 5]], 4, &v).unwrap();
        assert_eq!(targets.len(), 4);
        let distinct: std::collections::BTreeSet<_> = targets.iter().map(|t| t.tokens.clone()).collect();
        assert_eq!(distinct.len(), 4);
        assert_eq!(permutation_count(3, 6), 6);
        assert_eq!(permutation_count(1, 6), 1);
        assert_eq!(nth_permutation(3, 5), vec![2, 1, 0]);
    }
}
