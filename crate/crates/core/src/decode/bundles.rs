use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DecodeError;
use crate::backbone::{Vocab, B_CLOSE, B_OPEN, EOS};
use crate::worldgen::Session;

/// Canonical bundle list: items ascending within bundles, bundles sorted and
/// unique, each with at least two items.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedBundleSet(pub Vec<Vec<usize>>);

impl NormalizedBundleSet {
    /// Text form used as the vote key, e.g. `1,3|2,5`.
    pub fn key(&self) -> String {
        self.0
            .iter()
            .map(|b| b.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn bundles(&self) -> &[Vec<usize>] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn normalize(bundles: &[Vec<usize>]) -> NormalizedBundleSet {
    let mut out: Vec<Vec<usize>> = bundles
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.sort_unstable();
            b.dedup();
            b
        })
        .filter(|b| b.len() >= 2)
        .collect();
    out.sort();
    out.dedup();
    NormalizedBundleSet(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    /// Item tokens outside the session, plus repeats within a bundle.
    pub dropped_items: usize,
    /// Closed blocks left with fewer than two items.
    pub dropped_bundles: usize,
    /// Tokens outside any block, or non-item tokens inside one.
    pub stray_tokens: usize,
    /// A block was still open when the sequence ended.
    pub unterminated: bool,
}

/// Reads `B_OPEN item… B_CLOSE` blocks up to the first `EOS`. Never fails:
/// whatever cannot be read as a bundle of the session's items is dropped and
/// counted.
pub fn parse_bundles(tokens: &[usize], session: &Session, vocab: &Vocab) -> (Vec<Vec<usize>>, ParseReport) {
    let mut report = ParseReport::default();
    let mut bundles = Vec::new();
    let mut open: Option<Vec<usize>> = None;
    for &t in tokens {
        match t {
            EOS => break,
            B_OPEN => {
                if open.replace(Vec::new()).is_some() {
                    report.unterminated = true;
                }
            }
            B_CLOSE => match open.take() {
                Some(b) if b.len() >= 2 => bundles.push(b),
                Some(_) => report.dropped_bundles += 1,
                None => report.stray_tokens += 1,
            },
            _ => match (open.as_mut(), vocab.item_index(t)) {
                (Some(b), Some(item)) => {
                    if session.contains(item) && !b.contains(&item) {
                        b.push(item);
                    } else {
                        report.dropped_items += 1;
                    }
                }
                _ => report.stray_tokens += 1,
            },
        }
    }
    if open.is_some() {
        report.unterminated = true;
    }
    (bundles, report)
}

/// One candidate's normalized answer.
#[derive(Clone, Debug, PartialEq)]
pub struct Voter {
    pub set: NormalizedBundleSet,
    pub log_prob: f64,
    pub sample_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub winner: NormalizedBundleSet,
    pub count: usize,
    /// `(key, count)` for every distinct answer, most frequent first.
    pub tally: Vec<(String, usize)>,
}

/// Most frequent answer. Ties go to the higher mean log-probability, then to
/// the lowest sample index.
pub fn majority_vote(voters: &[Voter]) -> Result<Vote, DecodeError> {
    struct Group<'a> {
        set: &'a NormalizedBundleSet,
        count: usize,
        log_prob: f64,
        first: usize,
    }
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for v in voters {
        let g = groups.entry(v.set.key()).or_insert(Group { set: &v.set, count: 0, log_prob: 0.0, first: usize::MAX });
        g.count += 1;
        g.log_prob += v.log_prob;
        g.first = g.first.min(v.sample_index);
    }
    let mut ranked: Vec<(String, Group)> = groups.into_iter().collect();
    ranked.sort_by(|(_, a), (_, b)| {
        let (ma, mb) = (a.log_prob / a.count as f64, b.log_prob / b.count as f64);
        b.count.cmp(&a.count).then(mb.total_cmp(&ma)).then(a.first.cmp(&b.first))
    });
    let (_, best) = ranked.first().ok_or(DecodeError::NoCandidates)?;
    Ok(Vote {
        winner: best.set.clone(),
        count: best.count,
        tally: ranked.iter().map(|(k, g)| (k.clone(), g.count)).collect(),
    })
}
