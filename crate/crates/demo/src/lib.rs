//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every exported function takes and returns JSON. Failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use routedk::decode::{majority_vote, normalize, Voter};
use routedk::eval::session_metrics;
use routedk::fusion::{ties_merge, TiesConfig};
use routedk::numerics::Tensor;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

#[derive(Debug, Deserialize)]
pub struct TiesInput {
    pub experts: Vec<Vec<f64>>,
    pub density: f64,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct TiesOutput {
    /// Each expert after keeping its top entries by magnitude.
    pub trimmed: Vec<Vec<f64>>,
    /// Elected sign per coordinate: 1, -1, or 0 where every trimmed entry is zero.
    pub elected: Vec<i8>,
    pub merged: Vec<f64>,
    /// Plain coordinate-wise mean, for comparison.
    pub average: Vec<f64>,
}

pub fn ties_explain(input: &TiesInput) -> Result<TiesOutput, String> {
    let n = input.experts.first().map_or(0, Vec::len);
    if n == 0 || input.experts.iter().any(|e| e.len() != n) {
        return Err("experts must be non-empty vectors of equal length".into());
    }
    let config = TiesConfig { density: input.density };
    let tensors = input
        .experts
        .iter()
        .map(|e| Tensor::new(&[1, n], e.clone()).map_err(|e| e.to_string()))
        .collect::<Result<Vec<Tensor<f64>>, _>>()?;
    let trim = |t: &Tensor<f64>| ties_merge(&[t], &config).map(|m| m.data().to_vec()).map_err(|e| e.to_string());
    let trimmed = tensors.iter().map(trim).collect::<Result<Vec<_>, _>>()?;
    let elected = (0..n)
        .map(|j| {
            let any = trimmed.iter().any(|t| t[j] != 0.0);
            let sum: f64 = trimmed.iter().map(|t| t[j]).sum();
            match (any, sum >= 0.0) {
                (false, _) => 0,
                (true, true) => 1,
                (true, false) => -1,
            }
        })
        .collect();
    let refs: Vec<&Tensor<f64>> = tensors.iter().collect();
    let merged = ties_merge(&refs, &config).map_err(|e| e.to_string())?.data().to_vec();
    let k = input.experts.len() as f64;
    let average = (0..n).map(|j| input.experts.iter().map(|e| e[j]).sum::<f64>() / k).collect();
    Ok(TiesOutput { trimmed, elected, merged, average })
}

#[derive(Debug, Deserialize)]
pub struct Candidate {
    pub bundles: Vec<Vec<usize>>,
    #[serde(default)]
    pub log_prob: f64,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct VoteOutput {
    pub winner: Vec<Vec<usize>>,
    pub count: usize,
    pub tally: Vec<(String, usize)>,
}

pub fn vote(candidates: &[Candidate]) -> Result<VoteOutput, String> {
    let voters: Vec<Voter> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| Voter { set: normalize(&c.bundles), log_prob: c.log_prob, sample_index: i })
        .collect();
    let v = majority_vote(&voters).map_err(|e| e.to_string())?;
    Ok(VoteOutput { winner: v.winner.0, count: v.count, tally: v.tally })
}

#[derive(Debug, Deserialize)]
pub struct MetricsInput {
    pub predicted: Vec<Vec<usize>>,
    pub truth: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct MetricsOutput {
    pub predicted: Vec<Vec<usize>>,
    pub precision: f64,
    pub recall: f64,
    pub coverage: Option<f64>,
    /// Best overlap ratio of each predicted bundle.
    pub ratios: Vec<f64>,
}

pub fn score(input: &MetricsInput) -> Result<MetricsOutput, String> {
    let predicted = normalize(&input.predicted);
    let r = session_metrics(0, &predicted, &input.truth).map_err(|e| e.to_string())?;
    Ok(MetricsOutput {
        predicted: predicted.0,
        precision: r.precision,
        recall: r.recall,
        coverage: r.coverage,
        ratios: r.hits.iter().map(|h| h.map_or(0.0, |h| h.ratio)).collect(),
    })
}

fn run<I: for<'de> Deserialize<'de>, O: Serialize>(json: &str, f: impl Fn(&I) -> Result<O, String>) -> String {
    let result = serde_json::from_str::<I>(json).map_err(|e| e.to_string()).and_then(|i| f(&i));
    match result {
        Ok(o) => serde_json::to_string(&o).unwrap_or_else(|e| error(&e.to_string())),
        Err(e) => error(&e),
    }
}

fn error(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

/// `{"experts": [[..], ..], "density": 0.2}` to trimmed, elected, merged and average vectors.
#[wasm_bindgen(js_name = tiesExplain)]
pub fn ties_explain_json(json: &str) -> String {
    run(json, ties_explain)
}

/// `[{"bundles": [[..]], "log_prob": -1.2}, ..]` to the voted answer and tally.
#[wasm_bindgen(js_name = vote)]
pub fn vote_json(json: &str) -> String {
    run(json, |c: &Vec<Candidate>| vote(c))
}

/// `{"predicted": [[..]], "truth": [[..]]}` to per-session precision, recall and coverage.
#[wasm_bindgen(js_name = score)]
pub fn score_json(json: &str) -> String {
    run(json, score)
}
