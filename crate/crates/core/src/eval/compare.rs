use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EvalError, MetricsReport};
use crate::worldgen::Session;

/// Hash of the evaluated sessions' ids and ground truth.
pub fn split_fingerprint(sessions: &[Session]) -> String {
    let mut h = Sha256::new();
    for s in sessions {
        h.update(s.session_id.to_le_bytes());
        for b in &s.bundles {
            h.update((b.len() as u64).to_le_bytes());
            for &i in b {
                h.update((i as u64).to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub split_fingerprint: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub coverage: Option<f64>,
}

/// `run − baseline`, absolute and relative to the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub coverage: Option<f64>,
    pub rel_precision: Option<f64>,
    pub rel_recall: Option<f64>,
    pub rel_coverage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub split_fingerprint: String,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    pub deltas: Vec<Delta>,
}

fn rel(new: f64, old: f64) -> Option<f64> {
    (old != 0.0).then(|| (new - old) / old)
}

/// Rows sorted by run name, with every other run's change over `baseline`
/// (the first run by name when not given).
pub fn compare_strategies(runs: &[RunReport], baseline: Option<&str>) -> Result<Comparison, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::TooFewRuns(runs.len()));
    }
    let mut seen = BTreeSet::new();
    for r in runs {
        if !seen.insert(r.name.as_str()) {
            return Err(EvalError::DuplicateRun(r.name.clone()));
        }
    }
    let mut sorted: Vec<&RunReport> = runs.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let fp = &sorted[0].split_fingerprint;
    if let Some(r) = sorted.iter().find(|r| &r.split_fingerprint != fp) {
        return Err(EvalError::SplitMismatch { run: r.name.clone(), expected: fp.clone(), found: r.split_fingerprint.clone() });
    }
    let base = match baseline {
        Some(name) => *sorted.iter().find(|r| r.name == name).ok_or_else(|| EvalError::UnknownBaseline(name.into()))?,
        None => sorted[0],
    };
    let rows = sorted
        .iter()
        .map(|r| ComparisonRow {
            name: r.name.clone(),
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            coverage: r.metrics.coverage,
        })
        .collect();
    let b = &base.metrics;
    let deltas = sorted
        .iter()
        .filter(|r| r.name != base.name)
        .map(|r| {
            let m = &r.metrics;
            let cov = m.coverage.zip(b.coverage);
            Delta {
                name: r.name.clone(),
                precision: m.precision - b.precision,
                recall: m.recall - b.recall,
                coverage: cov.map(|(n, o)| n - o),
                rel_precision: rel(m.precision, b.precision),
                rel_recall: rel(m.recall, b.recall),
                rel_coverage: cov.and_then(|(n, o)| rel(n, o)),
            }
        })
        .collect();
    Ok(Comparison { split_fingerprint: fp.clone(), baseline: base.name.clone(), rows, deltas })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:+.1}%", v * 100.0))
}

impl Comparison {
    /// Aligned text table.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).chain(self.deltas.iter().map(|d| d.name.len() + 9)).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "split {}  (macro averages over sessions)", self.split_fingerprint);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}", "run", "precision", "recall", "coverage");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>9}  {:>9}",
                r.name,
                cell(Some(r.precision)),
                cell(Some(r.recall)),
                cell(r.coverage)
            );
        }
        for d in &self.deltas {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>9}  {:>9}",
                format!("improve {}", d.name),
                pct(d.rel_precision),
                pct(d.rel_recall),
                pct(d.rel_coverage)
            );
        }
        let _ = writeln!(out, "improvements are relative to {}", self.baseline);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::aggregate;

    fn run(name: &str, p: f64, fp: &str) -> RunReport {
        let mut m = aggregate(vec![crate::eval::SessionResult {
            session_id: 0,
            predicted: vec![],
            hits: vec![],
            precision: p,
            recall: 0.5,
            coverage: Some(0.5),
        }])
        .unwrap();
        m.per_session.clear();
        RunReport { name: name.into(), split_fingerprint: fp.into(), metrics: m }
    }

    #[test]
    fn improvement_is_relative() {
        let c = compare_strategies(&[run("b", 0.6, "x"), run("a", 0.5, "x")], None).unwrap();
        assert_eq!(c.rows[0].name, "a");
        assert_eq!(c.baseline, "a");
        assert!((c.deltas[0].rel_precision.unwrap() - 0.2).abs() < 1e-12);
        assert!(c.to_text().contains("+20.0%"));
    }

    #[test]
    fn identical_runs_have_zero_deltas() {
        let c = compare_strategies(&[run("a", 0.5, "x"), run("b", 0.5, "x")], Some("b")).unwrap();
        assert_eq!(c.deltas[0].name, "a");
        assert_eq!((c.deltas[0].precision, c.deltas[0].recall, c.deltas[0].coverage), (0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn errors() {
        assert!(compare_strategies(&[run("a", 0.5, "x")], None).is_err());
        assert!(compare_strategies(&[run("a", 0.5, "x"), run("b", 0.5, "y")], None).is_err());
        assert!(compare_strategies(&[run("a", 0.5, "x"), run("a", 0.5, "x")], None).is_err());
        assert!(compare_strategies(&[run("a", 0.5, "x"), run("b", 0.5, "x")], Some("c")).is_err());
    }
}
