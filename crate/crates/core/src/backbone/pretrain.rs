use super::{
    forward_graph, serialize_bundles, serialize_session, BackboneError, BackboneWeights, InputVariant, ModelConfig,
    NoHook, Vocab,
};
use crate::numerics::Graph;
use crate::training::{mean_loss, train_loop, Example, TrainConfig, TrainReport};
use crate::worldgen::{KnowledgeStore, Session};
use crate::Error;
use serde::{Deserialize, Serialize};

/// What the backbone reads during pretraining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainCorpus {
    /// Serialized session inputs under every variant, without bundle targets.
    Inputs,
    /// Inputs followed by their canonical bundle targets.
    #[default]
    InputsAndTargets,
}

/// Language-model corpus over every training session under every input variant.
pub fn pretrain_corpus(
    sessions: &[Session],
    knowledge: &KnowledgeStore,
    vocab: &Vocab,
    kind: PretrainCorpus,
) -> Result<Vec<Example>, Error> {
    let mut corpus = Vec::with_capacity(sessions.len() * 4);
    for s in sessions {
        let target = match kind {
            PretrainCorpus::Inputs => Vec::new(),
            PretrainCorpus::InputsAndTargets => serialize_bundles(&s.bundles, 0, vocab)?.tokens,
        };
        for variant in [InputVariant::Raw, InputVariant::High, InputVariant::Fine, InputVariant::Merged] {
            let k = (variant != InputVariant::Raw).then_some(knowledge);
            let input = serialize_session(s, variant, k, vocab)?;
            corpus.push(Example::language_model(s.session_id, &input.tokens, &target));
        }
    }
    Ok(corpus)
}

fn example_loss(weights: &BackboneWeights<f32>, ex: &Example, trainable: bool) -> Result<(Graph<f32>, crate::numerics::Var, Vec<crate::numerics::Var>), Error> {
    let mut g = Graph::new();
    let bound = weights.bind(&mut g, trainable);
    let logits = forward_graph(&mut g, &bound, &weights.config, ex.inputs(), ex.prompt_len, &mut NoHook)?;
    let (targets, mask) = ex.targets_and_mask();
    let loss = g.masked_next_token_nll(logits, &targets, &mask)?;
    Ok((g, loss, bound.vars()))
}

/// Mean next-token loss of the plain backbone over `examples`.
pub fn backbone_loss(weights: &BackboneWeights<f32>, examples: &[Example]) -> Result<f64, Error> {
    mean_loss(weights, examples, |w, ex| {
        let (g, loss, _) = example_loss(w, ex, false)?;
        Ok(g.value(loss).data()[0] as f64)
    })
}

/// Trains a fresh backbone on `corpus`, then freezes it.
pub fn pretrain_backbone(
    corpus: &[Example],
    config: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<(BackboneWeights<f32>, TrainReport), Error> {
    if corpus.is_empty() {
        return Err(BackboneError::EmptyCorpus.into());
    }
    let mut weights = BackboneWeights::<f32>::init(config, seed)?;
    let report = train_loop(
        &mut weights,
        corpus,
        train,
        seed.wrapping_add(1),
        |w, ex| {
            let (g, loss, vars) = example_loss(w, ex, true)?;
            let mut grads = g.backward(loss)?;
            let shapes: Vec<Vec<usize>> = w.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect();
            let grads = vars.iter().zip(&shapes).map(|(&v, s)| grads.take_or_zeros(v, s)).collect();
            Ok((g.value(loss).data()[0] as f64, grads))
        },
        |w| w.params_mut().expect("backbone is not frozen during pretraining"),
    )?;
    weights.freeze();
    Ok((weights, report))
}
