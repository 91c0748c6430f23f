//! Autoregressive generation, bundle parsing and majority-vote consensus.

mod bundles;
mod generate;

pub use bundles::{majority_vote, normalize, parse_bundles, NormalizedBundleSet, ParseReport, Vote, Voter};
pub use generate::{
    decode, read_predictions, tts_generate, write_predictions, Candidate, DecodeConfig, FusedModel, LanguageModel,
    Prediction, TtsReport, TtsResult,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("temperature {0} must be finite and non-negative")]
    Temperature(f64),
    #[error("at least one sample is required")]
    NoSamples,
    #[error("no candidates to vote on")]
    NoCandidates,
    #[error("model returned no logits")]
    EmptyLogits,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
