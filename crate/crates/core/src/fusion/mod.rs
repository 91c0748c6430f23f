//! Combining the experts: output averaging, TIES merging, learned static
//! layer coefficients and the input-aware per-layer router.

mod hook;
mod params;
mod ties;
mod train;

pub use hook::{fused_forward, Fusion, FusionHook};
pub use params::{route_weights, RouteTrace, RouterParams, StaticCoeffs, TraceLayer};
pub use ties::{merge_average, merge_ties, ties_merge, MergeMethod, MergedDelta, TiesConfig};
pub use train::{fusion_eval_loss, fusion_examples, route_trace, select_lr, train_router, train_static, FusionTrainConfig, GridResult};

use thiserror::Error;

use crate::lora::ExpertKind;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("density {0} is outside (0, 1]")]
    Density(f64),
    #[error("prompt length must be at least 1")]
    EmptyPrompt,
    #[error("expert {0:?} is not in the expert set")]
    MissingExpert(ExpertKind),
    #[error("router has {router} outputs for {experts} experts")]
    ExpertCount { router: usize, experts: usize },
    #[error("parameters cover {params} layers but the backbone has {layers}")]
    LayerCount { params: usize, layers: usize },
    #[error("deltas disagree in shape: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("no deltas to merge")]
    NoDeltas,
    #[error("TIES needs exactly {expected} experts, got {got}")]
    TiesExperts { expected: usize, got: usize },
    #[error("empty learning-rate grid")]
    EmptyGrid,
    #[error("{0} changed during fusion training")]
    FrozenChanged(String),
    #[error("route trace needs the dynamic strategy")]
    NotDynamic,
}
