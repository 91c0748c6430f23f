use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{majority_vote, normalize, parse_bundles, DecodeError, NormalizedBundleSet, ParseReport, Voter};
use crate::backbone::{BackboneWeights, SerializedInput, Vocab, EOS};
use crate::fusion::{fused_forward, Fusion};
use crate::lora::ExpertSet;
use crate::worldgen::Session;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Temperature of single decodes; 0 is greedy.
    pub temperature: f64,
    /// Temperature of the sampled candidates when `samples > 1`.
    pub tts_temperature: f64,
    pub samples: usize,
    /// Cap on generated tokens.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { temperature: 0.0, tts_temperature: 0.7, samples: 8, max_len: 40, seed: 0 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        for t in [self.temperature, self.tts_temperature] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(DecodeError::Temperature(t));
            }
        }
        if self.samples == 0 {
            return Err(DecodeError::NoSamples);
        }
        Ok(())
    }
}

/// Anything that scores the next token of a sequence.
pub trait LanguageModel: Sync {
    /// Logits over the vocabulary for the token after `tokens`.
    fn next_logits(&self, tokens: &[usize], prompt_len: usize) -> Result<Vec<f64>, Error>;

    fn max_context(&self) -> usize;
}

/// The frozen backbone with experts combined by one strategy.
pub struct FusedModel<'a> {
    pub backbone: &'a BackboneWeights<f32>,
    pub experts: &'a ExpertSet<f32>,
    pub fusion: &'a Fusion<f32>,
}

impl LanguageModel for FusedModel<'_> {
    fn next_logits(&self, tokens: &[usize], prompt_len: usize) -> Result<Vec<f64>, Error> {
        let (logits, _) = fused_forward(self.backbone, self.experts, self.fusion, tokens, prompt_len, false)?;
        let last = logits.rows() - 1;
        Ok(logits.row(last).iter().map(|&v| v as f64).collect())
    }

    fn max_context(&self) -> usize {
        self.backbone.config.max_context
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Generated tokens, including the final `EOS` when one was produced.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub sample_index: usize,
    pub truncated: bool,
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let t = if temperature > 0.0 { temperature } else { 1.0 };
    let scaled: Vec<f64> = logits.iter().map(|&l| l / t).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|&s| s - lse).collect()
}

/// Greedy (`temperature == 0`, lowest id on ties) or seeded sampled decode.
/// The log-probability is accumulated under the distribution actually used;
/// greedy decodes score with the plain softmax.
pub fn decode(
    model: &dyn LanguageModel,
    input: &SerializedInput,
    temperature: f64,
    max_len: usize,
    seed: u64,
    sample_index: usize,
) -> Result<Candidate, Error> {
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(DecodeError::Temperature(temperature).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = input.tokens.clone();
    let mut out = Vec::new();
    let mut log_prob = 0.0;
    let limit = max_len.min(model.max_context().saturating_sub(seq.len()));
    while out.len() < limit {
        let logits = model.next_logits(&seq, input.prompt_len)?;
        if logits.is_empty() {
            return Err(DecodeError::EmptyLogits.into());
        }
        let lp = log_softmax(&logits, temperature);
        let next = if temperature == 0.0 {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        } else {
            let weights: Vec<f64> = lp.iter().map(|&l| l.exp()).collect();
            WeightedIndex::new(&weights).map_err(|_| DecodeError::EmptyLogits)?.sample(&mut rng)
        };
        log_prob += lp[next];
        seq.push(next);
        out.push(next);
        if next == EOS {
            return Ok(Candidate { tokens: out, log_prob, sample_index, truncated: false });
        }
    }
    Ok(Candidate { tokens: out, log_prob, sample_index, truncated: true })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtsReport {
    pub n_candidates: usize,
    pub vote_count: usize,
    pub tally: Vec<(String, usize)>,
    /// Some candidate hit the length cap.
    pub truncated: bool,
    pub parse: Vec<ParseReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtsResult {
    pub bundles: NormalizedBundleSet,
    pub report: TtsReport,
}

fn session_seed(seed: u64, session_id: u64) -> u64 {
    seed ^ session_id.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// `samples` seeded decodes, parsed, normalized and voted. One sample is a
/// plain decode at `temperature` (greedy by default).
pub fn tts_generate(
    model: &dyn LanguageModel,
    session: &Session,
    input: &SerializedInput,
    config: &DecodeConfig,
    vocab: &Vocab,
) -> Result<TtsResult, Error> {
    config.validate()?;
    let base = session_seed(config.seed, session.session_id);
    let temperature = if config.samples == 1 { config.temperature } else { config.tts_temperature };
    let run = |i: usize| decode(model, input, temperature, config.max_len, base.wrapping_add(i as u64), i);
    let candidates: Vec<Candidate> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..config.samples).into_par_iter().map(run).collect::<Result<_, _>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..config.samples).map(run).collect::<Result<_, _>>()?
        }
    };
    let mut voters = Vec::with_capacity(candidates.len());
    let mut parse = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let (bundles, report) = parse_bundles(&c.tokens, session, vocab);
        voters.push(Voter { set: normalize(&bundles), log_prob: c.log_prob, sample_index: c.sample_index });
        parse.push(report);
    }
    let vote = majority_vote(&voters)?;
    Ok(TtsResult {
        bundles: vote.winner,
        report: TtsReport {
            n_candidates: candidates.len(),
            vote_count: vote.count,
            tally: vote.tally,
            truncated: candidates.iter().any(|c| c.truncated),
            parse,
        },
    })
}

/// One line of `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub session_id: u64,
    pub bundles: Vec<Vec<usize>>,
    pub n_candidates: usize,
    pub vote_count: usize,
    pub truncated: bool,
}

impl Prediction {
    pub fn from_result(session_id: u64, result: &TtsResult) -> Self {
        Self {
            session_id,
            bundles: result.bundles.0.clone(),
            n_candidates: result.report.n_candidates,
            vote_count: result.report.vote_count,
            truncated: result.report.truncated,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DecodeError {
    DecodeError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), DecodeError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for p in predictions {
        let line = serde_json::to_string(p).map_err(|e| io_err(path, e))?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, DecodeError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}
