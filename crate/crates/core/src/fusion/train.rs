use serde::{Deserialize, Serialize};

use super::{Fusion, FusionError, FusionHook, RouteTrace, RouterParams, StaticCoeffs};
use crate::backbone::{forward_graph, serialize_bundles, serialize_session, BackboneWeights, InputVariant, Vocab};
use crate::lora::{expert_examples, ExpertKind, ExpertSet};
use crate::numerics::{Graph, Tensor, Var};
use crate::training::{mean_loss, train_loop, Example, TrainConfig, TrainReport};
use crate::worldgen::Session;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionTrainConfig {
    /// `lr` here is ignored in favour of `lr_grid`.
    pub train: TrainConfig,
    pub lr_grid: Vec<f64>,
    pub p_max: usize,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self { train: TrainConfig { epochs: 1, ..TrainConfig::default() }, lr_grid: vec![1e-4, 1e-3, 1e-2], p_max: 6 }
    }
}

/// Raw-input training stream for the fusion parameters.
pub fn fusion_examples(sessions: &[Session], vocab: &Vocab, p_max: usize) -> Result<Vec<Example>, Error> {
    expert_examples(ExpertKind::Base, sessions, None, vocab, p_max)
}

fn fusion_loss(
    backbone: &BackboneWeights<f32>,
    experts: &ExpertSet<f32>,
    fusion: &Fusion<f32>,
    ex: &Example,
    trainable: bool,
) -> Result<(Graph<f32>, Var, Vec<Var>), Error> {
    let mut g = Graph::new();
    let bound = backbone.bind(&mut g, false);
    let mut hook = FusionHook::bind(&mut g, backbone.config.layers, experts, fusion, trainable, false)?;
    let logits = forward_graph(&mut g, &bound, &backbone.config, ex.inputs(), ex.prompt_len, &mut hook)?;
    let (targets, mask) = ex.targets_and_mask();
    let loss = g.masked_next_token_nll(logits, &targets, &mask)?;
    Ok((g, loss, hook.trainable_vars()))
}

fn fusion_params_mut(fusion: &mut Fusion<f32>) -> Vec<&mut Tensor<f32>> {
    match fusion {
        Fusion::Static(s) => s.params_mut(),
        Fusion::Dynamic(r) => r.params_mut(),
        _ => Vec::new(),
    }
}

fn train_fusion(
    init: Fusion<f32>,
    sessions: &[Session],
    backbone: &BackboneWeights<f32>,
    experts: &ExpertSet<f32>,
    vocab: &Vocab,
    config: &FusionTrainConfig,
    lr: f64,
    seed: u64,
) -> Result<(Fusion<f32>, TrainReport), Error> {
    backbone.verify_frozen()?;
    let expert_hashes = experts.hashes();
    let examples = fusion_examples(sessions, vocab, config.p_max)?;
    let mut fusion = init;
    let shapes: Vec<Vec<usize>> = fusion_params_mut(&mut fusion).iter().map(|t| t.shape().to_vec()).collect();
    let train = TrainConfig { lr, ..config.train.clone() };
    let report = train_loop(
        &mut fusion,
        &examples,
        &train,
        seed,
        |f, ex| {
            let (g, loss, vars) = fusion_loss(backbone, experts, f, ex, true)?;
            let mut grads = g.backward(loss)?;
            let grads = vars.iter().zip(&shapes).map(|(&v, s)| grads.take_or_zeros(v, s)).collect();
            Ok((g.value(loss).data()[0] as f64, grads))
        },
        fusion_params_mut,
    )?;
    backbone.verify_frozen()?;
    for ((kind, before), (_, after)) in expert_hashes.iter().zip(experts.hashes()) {
        if *before != after {
            return Err(FusionError::FrozenChanged(format!("{} expert", kind.name())).into());
        }
    }
    Ok((fusion, report))
}

/// Trains the per-layer router from a zero initialization at a fixed `lr`.
pub fn train_router(
    sessions: &[Session],
    backbone: &BackboneWeights<f32>,
    experts: &ExpertSet<f32>,
    vocab: &Vocab,
    config: &FusionTrainConfig,
    lr: f64,
    seed: u64,
) -> Result<(RouterParams<f32>, TrainReport), Error> {
    let init = Fusion::Dynamic(RouterParams::zeros(backbone.config.layers, backbone.config.width, experts.len()));
    match train_fusion(init, sessions, backbone, experts, vocab, config, lr, seed)? {
        (Fusion::Dynamic(r), report) => Ok((r, report)),
        _ => unreachable!("strategy is preserved by training"),
    }
}

/// Trains layer-wise coefficients from `1/K` at a fixed `lr`.
pub fn train_static(
    sessions: &[Session],
    backbone: &BackboneWeights<f32>,
    experts: &ExpertSet<f32>,
    vocab: &Vocab,
    config: &FusionTrainConfig,
    lr: f64,
    seed: u64,
) -> Result<(StaticCoeffs<f32>, TrainReport), Error> {
    let init = Fusion::Static(StaticCoeffs::uniform(backbone.config.layers, experts.len()));
    match train_fusion(init, sessions, backbone, experts, vocab, config, lr, seed)? {
        (Fusion::Static(s), report) => Ok((s, report)),
        _ => unreachable!("strategy is preserved by training"),
    }
}

/// Mean canonical-target NLL of a fused model on raw inputs.
pub fn fusion_eval_loss(
    fusion: &Fusion<f32>,
    sessions: &[Session],
    backbone: &BackboneWeights<f32>,
    experts: &ExpertSet<f32>,
    vocab: &Vocab,
) -> Result<f64, Error> {
    let examples = sessions
        .iter()
        .map(|s| {
            let input = serialize_session(s, InputVariant::Raw, None, vocab)?;
            let target = serialize_bundles(&s.bundles, 0, vocab)?;
            Ok(Example::supervised(s.session_id, &input.tokens, &target.tokens))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    mean_loss(fusion, &examples, |f, ex| {
        let (g, loss, _) = fusion_loss(backbone, experts, f, ex, false)?;
        Ok(g.value(loss).data()[0] as f64)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult<T> {
    pub lr: f64,
    pub value: T,
    /// `(lr, validation loss)` for every grid point, ascending in `lr`.
    pub losses: Vec<(f64, f64)>,
}

/// Runs `fit` at every learning rate and keeps the lowest validation loss;
/// equal losses go to the smaller rate.
pub fn select_lr<T>(grid: &[f64], mut fit: impl FnMut(f64) -> Result<(T, f64), Error>) -> Result<GridResult<T>, Error> {
    let mut lrs = grid.to_vec();
    lrs.sort_by(|a, b| a.total_cmp(b));
    lrs.dedup();
    let mut best: Option<(f64, T, f64)> = None;
    let mut losses = Vec::new();
    for lr in lrs {
        let (value, loss) = fit(lr)?;
        log::info!("lr {lr:e}: validation loss {loss:.5}");
        losses.push((lr, loss));
        if best.as_ref().map_or(true, |(_, _, b)| loss < *b) {
            best = Some((lr, value, loss));
        }
    }
    let (lr, value, _) = best.ok_or(FusionError::EmptyGrid)?;
    Ok(GridResult { lr, value, losses })
}

/// Per-layer routing weights for one session's prompt.
pub fn route_trace(
    session: &Session,
    backbone: &BackboneWeights<f32>,
    experts: &ExpertSet<f32>,
    fusion: &Fusion<f32>,
    vocab: &Vocab,
) -> Result<RouteTrace, Error> {
    if !matches!(fusion, Fusion::Dynamic(_)) {
        return Err(FusionError::NotDynamic.into());
    }
    let input = serialize_session(session, InputVariant::Raw, None, vocab)?;
    let (_, trace) = super::fused_forward(backbone, experts, fusion, &input.tokens, input.prompt_len, true)?;
    Ok(RouteTrace { session_id: session.session_id, layers: trace.unwrap_or_default() })
}
