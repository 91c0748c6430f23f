//! Low-rank adapters on the frozen backbone and the training of the
//! knowledge-specific experts.

mod adapter;
mod train;

pub use adapter::{AdapterHook, BoundAdapter, ExpertKind, ExpertSet, LoraAdapter, LoraConfig, LoraPair};
pub use train::{adapter_forward, expert_eval_loss, expert_examples, expert_seed, train_expert, ExpertTrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoraError {
    #[error("rank {rank} is not below min(d_in, d_out) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("layer {0} is not adapted")]
    LayerNotAdapted(usize),
    #[error("adapters are not shape-compatible: {0}")]
    Incompatible(String),
    #[error("{0:?} expert needs distilled knowledge")]
    MissingKnowledge(ExpertKind),
    #[error("base expert takes raw input only")]
    UnexpectedKnowledge,
}
