use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::BackboneError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const B_OPEN: usize = 4;
pub const B_CLOSE: usize = 5;
pub const KH: usize = 6;
pub const KF: usize = 7;

const RESERVED: [&str; 8] = ["PAD", "BOS", "EOS", "SEP", "B_OPEN", "B_CLOSE", "KH", "KF"];

/// Counts that determine the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub items: usize,
    pub categories: usize,
    pub intents: usize,
    pub rules: usize,
}

/// Dense symbolic vocabulary: reserved tokens, then categories, intents,
/// rules and items, each in ascending index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    spec: VocabSpec,
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

pub fn build_vocab(spec: &VocabSpec, ceiling: usize) -> Result<Vocab, BackboneError> {
    let size = RESERVED.len() + spec.categories + spec.intents + spec.rules + spec.items;
    if size > ceiling {
        return Err(BackboneError::VocabTooLarge { size, ceiling });
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend((0..spec.categories).map(|c| format!("CAT_{c}")));
    tokens.extend((0..spec.intents).map(|k| format!("INTENT_{k}")));
    tokens.extend((0..spec.rules).map(|j| format!("RULE_{j}")));
    tokens.extend((0..spec.items).map(|i| format!("ITEM_{i}")));
    let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(Vocab { spec: *spec, tokens, ids })
}

impl Vocab {
    pub fn spec(&self) -> &VocabSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    fn cat_base(&self) -> usize {
        RESERVED.len()
    }

    fn intent_base(&self) -> usize {
        self.cat_base() + self.spec.categories
    }

    fn rule_base(&self) -> usize {
        self.intent_base() + self.spec.intents
    }

    fn item_base(&self) -> usize {
        self.rule_base() + self.spec.rules
    }

    pub fn category(&self, c: usize) -> Result<usize, BackboneError> {
        (c < self.spec.categories)
            .then(|| self.cat_base() + c)
            .ok_or_else(|| BackboneError::UnknownToken(format!("CAT_{c}")))
    }

    pub fn item(&self, i: usize) -> Result<usize, BackboneError> {
        (i < self.spec.items)
            .then(|| self.item_base() + i)
            .ok_or_else(|| BackboneError::UnknownToken(format!("ITEM_{i}")))
    }

    /// Item index of an `ITEM_*` token id.
    pub fn item_index(&self, id: usize) -> Option<usize> {
        (self.item_base()..self.item_base() + self.spec.items)
            .contains(&id)
            .then(|| id - self.item_base())
    }

    pub fn lookup(&self, token: &str) -> Result<usize, BackboneError> {
        self.id(token).ok_or_else(|| BackboneError::UnknownToken(token.to_string()))
    }

    /// `{token: id}` object with keys in sorted order.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, usize> = self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        serde_json::to_string_pretty(&map).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BackboneError> {
        let map: BTreeMap<String, usize> =
            serde_json::from_str(text).map_err(|e| BackboneError::Format(e.to_string()))?;
        let mut tokens = vec![String::new(); map.len()];
        for (token, id) in map {
            if id >= tokens.len() || !tokens[id].is_empty() {
                return Err(BackboneError::Format(format!("ids are not dense at {token}")));
            }
            tokens[id] = token;
        }
        let count = |prefix: &str| tokens.iter().filter(|t| t.starts_with(prefix)).count();
        let spec = VocabSpec {
            items: count("ITEM_"),
            categories: count("CAT_"),
            intents: count("INTENT_"),
            rules: count("RULE_"),
        };
        let rebuilt = build_vocab(&spec, usize::MAX)?;
        if rebuilt.tokens != tokens {
            return Err(BackboneError::Format("vocabulary does not follow the reserved layout".into()));
        }
        Ok(rebuilt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VocabSpec {
        VocabSpec { items: 3, categories: 2, intents: 2, rules: 2 }
    }

    #[test]
    fn size_and_layout() {
        let v = build_vocab(&small(), 100).unwrap();
        assert_eq!(v.len(), 17);
        assert_eq!(v.item(0).unwrap(), 8 + 2 + 2 + 2);
        assert_eq!(v.id("KF"), Some(KF));
        assert_eq!(v.token(v.item(2).unwrap()), Some("ITEM_2"));
        assert_eq!(v.item_index(v.item(1).unwrap()), Some(1));
        assert!(v.item(3).is_err());
    }

    #[test]
    fn deterministic_json() {
        let a = build_vocab(&small(), 100).unwrap().to_json();
        let b = build_vocab(&small(), 100).unwrap().to_json();
        assert_eq!(a, b);
        assert_eq!(Vocab::from_json(&a).unwrap(), build_vocab(&small(), 100).unwrap());
    }

    #[test]
    fn ceiling_enforced() {
        assert!(matches!(build_vocab(&small(), 16), Err(BackboneError::VocabTooLarge { size: 17, .. })));
    }
}
