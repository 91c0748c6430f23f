//! The frozen student: symbolic vocabulary, input/target serialization and a
//! small pre-norm decoder-only transformer.

mod model;
mod pretrain;
mod serialize;
mod vocab;

pub use model::{
    forward, forward_graph, tensors_hash, BackboneWeights, BoundBackbone, BoundLayer, LayerHook, LayerWeights,
    ModelConfig, NoHook, Projection,
};
pub use pretrain::{backbone_loss, pretrain_backbone, pretrain_corpus, PretrainCorpus};
pub use serialize::{
    canonical_bundles, nth_permutation, permutation_count, serialize_bundles, serialize_session, target_permutations,
    InputVariant, SerializedInput, TargetSequence,
};
pub use vocab::{build_vocab, Vocab, VocabSpec, BOS, B_CLOSE, B_OPEN, EOS, KF, KH, PAD, SEP};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("vocabulary of {size} tokens exceeds the ceiling of {ceiling}")]
    VocabTooLarge { size: usize, ceiling: usize },
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("malformed vocabulary: {0}")]
    Format(String),
    #[error("knowledge given for a raw input")]
    UnexpectedKnowledge,
    #[error("missing knowledge for session {0}")]
    MissingKnowledge(u64),
    #[error("a bundle needs at least two items, got {0}")]
    BundleTooSmall(usize),
    #[error("permutation {index} out of range for {bundles} bundles")]
    Permutation { index: usize, bundles: usize },
    #[error("input of length {len} exceeds the context length {max}")]
    ContextLength { len: usize, max: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("backbone is frozen")]
    Frozen,
    #[error("backbone is not frozen")]
    NotFrozen,
    #[error("frozen backbone changed since freezing")]
    FrozenHashChanged,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
