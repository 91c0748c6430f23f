use serde::{Deserialize, Serialize};

use super::{AdapterHook, ExpertKind, LoraAdapter, LoraConfig, LoraError};
use crate::backbone::{forward_graph, serialize_bundles, serialize_session, target_permutations, BackboneWeights, Vocab};
use crate::numerics::{Graph, Var};
use crate::training::{mean_loss, train_loop, Example, TrainConfig, TrainReport};
use crate::worldgen::{KnowledgeStore, Session};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertTrainConfig {
    pub lora: LoraConfig,
    pub train: TrainConfig,
    /// Cap on bundle-order permutations per session.
    pub p_max: usize,
}

impl Default for ExpertTrainConfig {
    fn default() -> Self {
        Self { lora: LoraConfig::default(), train: TrainConfig::default(), p_max: 6 }
    }
}

/// Seed of one expert, derived from the run seed and the expert kind.
pub fn expert_seed(seed: u64, kind: ExpertKind) -> u64 {
    let k = kind as u64 + 1;
    seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn knowledge_for(kind: ExpertKind, knowledge: Option<&KnowledgeStore>) -> Result<Option<&KnowledgeStore>, LoraError> {
    match (kind, knowledge) {
        (ExpertKind::Base, None) => Ok(None),
        (ExpertKind::Base, Some(_)) => Err(LoraError::UnexpectedKnowledge),
        (_, None) => Err(LoraError::MissingKnowledge(kind)),
        (_, Some(k)) => Ok(Some(k)),
    }
}

/// Teacher-forcing stream for one expert: every session with each of its
/// permuted targets. Loss covers the target tokens only.
pub fn expert_examples(
    kind: ExpertKind,
    sessions: &[Session],
    knowledge: Option<&KnowledgeStore>,
    vocab: &Vocab,
    p_max: usize,
) -> Result<Vec<Example>, Error> {
    let knowledge = knowledge_for(kind, knowledge)?;
    let mut out = Vec::new();
    for s in sessions {
        let input = serialize_session(s, kind.variant(), knowledge, vocab)?;
        for target in target_permutations(&s.bundles, p_max, vocab)? {
            out.push(Example::supervised(s.session_id, &input.tokens, &target.tokens));
        }
    }
    Ok(out)
}

fn adapter_loss(
    backbone: &BackboneWeights<f32>,
    adapter: &LoraAdapter<f32>,
    ex: &Example,
    trainable: bool,
) -> Result<(Graph<f32>, Var, Vec<Var>), Error> {
    let mut g = Graph::new();
    let bound = backbone.bind(&mut g, false);
    let lora = adapter.bind(&mut g, trainable);
    let logits = forward_graph(&mut g, &bound, &backbone.config, ex.inputs(), ex.prompt_len, &mut AdapterHook { adapter: &lora })?;
    let (targets, mask) = ex.targets_and_mask();
    let loss = g.masked_next_token_nll(logits, &targets, &mask)?;
    Ok((g, loss, lora.vars()))
}

/// Trains one expert's adapter against the frozen backbone.
pub fn train_expert(
    kind: ExpertKind,
    sessions: &[Session],
    knowledge: Option<&KnowledgeStore>,
    backbone: &BackboneWeights<f32>,
    vocab: &Vocab,
    config: &ExpertTrainConfig,
    seed: u64,
) -> Result<(LoraAdapter<f32>, TrainReport), Error> {
    backbone.verify_frozen()?;
    let examples = expert_examples(kind, sessions, knowledge, vocab, config.p_max)?;
    let seed = expert_seed(seed, kind);
    let mut adapter = LoraAdapter::init(&backbone.config, &config.lora, seed)?;
    let shapes: Vec<Vec<usize>> = adapter.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let report = train_loop(
        &mut adapter,
        &examples,
        &config.train,
        seed.wrapping_add(1),
        |a, ex| {
            let (g, loss, vars) = adapter_loss(backbone, a, ex, true)?;
            let mut grads = g.backward(loss)?;
            let grads = vars.iter().zip(&shapes).map(|(&v, s)| grads.take_or_zeros(v, s)).collect();
            Ok((g.value(loss).data()[0] as f64, grads))
        },
        |a| a.params_mut(),
    )?;
    backbone.verify_frozen()?;
    log::info!("trained {} expert: {} steps, final loss {:?}", kind.name(), report.steps, report.epoch_losses.last());
    Ok((adapter, report))
}

/// Mean target NLL of an adapter on held-out sessions, canonical order only.
pub fn expert_eval_loss(
    adapter: &LoraAdapter<f32>,
    kind: ExpertKind,
    sessions: &[Session],
    knowledge: Option<&KnowledgeStore>,
    backbone: &BackboneWeights<f32>,
    vocab: &Vocab,
) -> Result<f64, Error> {
    let knowledge = knowledge_for(kind, knowledge)?;
    let examples = sessions
        .iter()
        .map(|s| {
            let input = serialize_session(s, kind.variant(), knowledge, vocab)?;
            let target = serialize_bundles(&s.bundles, 0, vocab)?;
            Ok(Example::supervised(s.session_id, &input.tokens, &target.tokens))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    mean_loss(adapter, &examples, |a, ex| {
        let (g, loss, _) = adapter_loss(backbone, a, ex, false)?;
        Ok(g.value(loss).data()[0] as f64)
    })
}

/// Gradient-free `T×V` logits of the backbone with one adapter applied.
pub fn adapter_forward(
    backbone: &BackboneWeights<f32>,
    adapter: &LoraAdapter<f32>,
    tokens: &[usize],
    prompt_len: usize,
) -> Result<crate::numerics::Tensor<f32>, Error> {
    let mut g = Graph::new();
    let bound = backbone.bind(&mut g, false);
    let lora = adapter.bind(&mut g, false);
    let logits = forward_graph(&mut g, &bound, &backbone.config, tokens, prompt_len, &mut AdapterHook { adapter: &lora })?;
    Ok(g.value(logits).clone())
}
