use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::decode::NormalizedBundleSet;

/// A predicted bundle that is a subset of ground-truth bundle `truth`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub predicted: usize,
    pub truth: usize,
    /// `|b ∩ g| / |g|`
    pub ratio: f64,
}

fn is_subset(b: &[usize], g: &[usize]) -> bool {
    b.iter().all(|i| g.contains(i))
}

/// For each predicted bundle, the ground-truth bundle containing it with the
/// largest overlap ratio (lowest index on ties), or `None`.
pub fn match_hits(predicted: &NormalizedBundleSet, truth: &[Vec<usize>]) -> Vec<Option<Hit>> {
    predicted
        .bundles()
        .iter()
        .enumerate()
        .map(|(p, b)| {
            let mut best: Option<Hit> = None;
            for (t, g) in truth.iter().enumerate() {
                if !is_subset(b, g) {
                    continue;
                }
                let ratio = b.len() as f64 / g.len() as f64;
                if best.map_or(true, |h| ratio > h.ratio) {
                    best = Some(Hit { predicted: p, truth: t, ratio });
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_id: u64,
    pub predicted: Vec<Vec<usize>>,
    pub hits: Vec<Option<Hit>>,
    pub precision: f64,
    pub recall: f64,
    /// `None` when no prediction is a hit.
    pub coverage: Option<f64>,
}

pub fn session_metrics(
    session_id: u64,
    predicted: &NormalizedBundleSet,
    truth: &[Vec<usize>],
) -> Result<SessionResult, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth(session_id));
    }
    let hits = match_hits(predicted, truth);
    let n_hits = hits.iter().flatten().count();
    let precision = if predicted.is_empty() { 0.0 } else { n_hits as f64 / predicted.bundles().len() as f64 };
    let found = truth
        .iter()
        .filter(|g| predicted.bundles().iter().any(|b| is_subset(b, g)))
        .count();
    let recall = found as f64 / truth.len() as f64;
    let coverage = (n_hits > 0).then(|| hits.iter().flatten().map(|h| h.ratio).sum::<f64>() / n_hits as f64);
    Ok(SessionResult { session_id, predicted: predicted.bundles().to_vec(), hits, precision, recall, coverage })
}

/// Per-session (macro) averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: String,
    pub precision: f64,
    pub recall: f64,
    /// Mean over sessions with at least one hit; `None` when there are none.
    pub coverage: Option<f64>,
    pub n_sessions: usize,
    pub n_coverage_sessions: usize,
    pub per_session: Vec<SessionResult>,
}

pub fn aggregate(results: Vec<SessionResult>) -> Result<MetricsReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoSessions);
    }
    let n = results.len() as f64;
    let precision = results.iter().map(|r| r.precision).sum::<f64>() / n;
    let recall = results.iter().map(|r| r.recall).sum::<f64>() / n;
    let covs: Vec<f64> = results.iter().filter_map(|r| r.coverage).collect();
    let coverage = (!covs.is_empty()).then(|| covs.iter().sum::<f64>() / covs.len() as f64);
    Ok(MetricsReport {
        averaging: "macro over sessions; coverage over sessions with at least one hit".into(),
        precision,
        recall,
        coverage,
        n_sessions: results.len(),
        n_coverage_sessions: covs.len(),
        per_session: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(b: &[&[usize]]) -> NormalizedBundleSet {
        NormalizedBundleSet(b.iter().map(|x| x.to_vec()).collect())
    }

    #[test]
    fn hit_assignment() {
        let h = match_hits(&set(&[&[1, 2]]), &[vec![1, 2, 3]]);
        assert_eq!(h, vec![Some(Hit { predicted: 0, truth: 0, ratio: 2.0 / 3.0 })]);
        assert_eq!(match_hits(&set(&[&[1, 4]]), &[vec![1, 2, 3]]), vec![None]);
        let h = match_hits(&set(&[&[1, 2]]), &[vec![1, 2], vec![1, 2, 3]]);
        assert_eq!(h[0].unwrap().truth, 0);
        let h = match_hits(&set(&[&[1, 2]]), &[vec![1, 2, 4], vec![1, 2, 3]]);
        assert_eq!(h[0].unwrap().truth, 0);
    }

    #[test]
    fn session_examples() {
        let r = session_metrics(0, &set(&[&[1, 2]]), &[vec![1, 2, 3]]).unwrap();
        assert_eq!((r.precision, r.recall, r.coverage), (1.0, 1.0, Some(2.0 / 3.0)));
        let r = session_metrics(0, &set(&[&[1, 2], &[4, 5]]), &[vec![1, 2, 3]]).unwrap();
        assert_eq!((r.precision, r.recall, r.coverage), (0.5, 1.0, Some(2.0 / 3.0)));
        let r = session_metrics(0, &set(&[]), &[vec![1, 2, 3]]).unwrap();
        assert_eq!((r.precision, r.recall, r.coverage), (0.0, 0.0, None));
        assert!(session_metrics(0, &set(&[]), &[]).is_err());
    }

    #[test]
    fn aggregation() {
        let a = session_metrics(0, &set(&[&[1, 2]]), &[vec![1, 2]]).unwrap();
        let b = session_metrics(1, &set(&[&[1, 2], &[3, 4]]), &[vec![1, 2]]).unwrap();
        let r = aggregate(vec![a.clone(), b]).unwrap();
        assert_eq!(r.precision, 0.75);
        let single = aggregate(vec![a.clone()]).unwrap();
        assert_eq!((single.precision, single.recall, single.coverage), (a.precision, a.recall, a.coverage));
        let empty = session_metrics(2, &set(&[]), &[vec![1, 2]]).unwrap();
        let r = aggregate(vec![empty.clone(), empty]).unwrap();
        assert_eq!((r.precision, r.recall, r.coverage), (0.0, 0.0, None));
        assert!(aggregate(vec![]).is_err());
    }
}
