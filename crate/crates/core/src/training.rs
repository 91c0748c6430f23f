//! Shared mini-batch training loop and teacher-forcing examples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{AdamState, Tensor};
use crate::Error;

/// One teacher-forced sequence: prompt followed by target tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub session_id: u64,
    pub tokens: Vec<usize>,
    /// Number of prompt tokens; pooling covers exactly these positions.
    pub prompt_len: usize,
    /// First token index that contributes to the loss.
    pub loss_from: usize,
}

impl Example {
    /// Example whose loss covers only the target tokens after the prompt.
    pub fn supervised(session_id: u64, prompt: &[usize], target: &[usize]) -> Self {
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(target);
        Self { session_id, tokens, prompt_len: prompt.len(), loss_from: prompt.len() }
    }

    /// Example trained on every next-token position.
    pub fn language_model(session_id: u64, prompt: &[usize], target: &[usize]) -> Self {
        let mut ex = Self::supervised(session_id, prompt, target);
        ex.loss_from = 1;
        ex
    }

    /// Model input: every token but the last.
    pub fn inputs(&self) -> &[usize] {
        &self.tokens[..self.tokens.len() - 1]
    }

    /// Next-token targets and loss mask aligned with [`Self::inputs`].
    pub fn targets_and_mask(&self) -> (Vec<usize>, Vec<bool>) {
        let n = self.tokens.len() - 1;
        let targets = self.tokens[1..].to_vec();
        let mask = (0..n).map(|t| t + 1 >= self.loss_from).collect();
        (targets, mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 3, lr: 2e-4, batch_size: 8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean loss of the first mini-batch, before any update.
    pub initial_loss: f64,
    pub steps: u64,
}

/// Per-example loss and gradients, in the trainer's parameter order.
pub(crate) type LossAndGrads = (f64, Vec<Tensor<f32>>);

fn batch_results<S, G>(state: &S, batch: &[&Example], grad_fn: &G) -> Result<Vec<LossAndGrads>, Error>
where
    S: Sync,
    G: Fn(&S, &Example) -> Result<LossAndGrads, Error> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        batch.par_iter().map(|ex| grad_fn(state, ex)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        batch.iter().map(|ex| grad_fn(state, ex)).collect()
    }
}

/// Mini-batch Adam over shuffled examples. Gradients of a batch are summed in
/// example order, so results do not depend on thread scheduling.
pub(crate) fn train_loop<S, G, P>(
    state: &mut S,
    examples: &[Example],
    config: &TrainConfig,
    seed: u64,
    grad_fn: G,
    params_mut: P,
) -> Result<TrainReport, Error>
where
    S: Sync,
    G: Fn(&S, &Example) -> Result<LossAndGrads, Error> + Sync,
    P: Fn(&mut S) -> Vec<&mut Tensor<f32>>,
{
    if examples.is_empty() {
        return Err(Error::EmptyData("training examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::<f32>::new(config.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport::default();
    let batch_size = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let results = batch_results(state, &batch, &grad_fn)?;
            let mut iter = results.into_iter();
            let (mut loss_sum, mut grads) = iter.next().expect("non-empty batch");
            for (loss, g) in iter {
                loss_sum += loss;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.add_assign(gi)?;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            let grads: Vec<Tensor<f32>> = grads.into_iter().map(|g| g.scale(inv)).collect();
            if epoch == 0 && b == 0 {
                report.initial_loss = loss_sum / batch.len() as f64;
            }
            total += loss_sum;
            let mut params = params_mut(state);
            adam.step(&mut params, &grads)?;
        }
        let mean = total / examples.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    report.steps = adam.step_count();
    Ok(report)
}

/// Mean of a per-example loss over `examples`.
pub(crate) fn mean_loss<S, L>(state: &S, examples: &[Example], loss_fn: L) -> Result<f64, Error>
where
    S: Sync,
    L: Fn(&S, &Example) -> Result<f64, Error> + Sync,
{
    if examples.is_empty() {
        return Err(Error::EmptyData("evaluation examples"));
    }
    #[cfg(feature = "parallel")]
    let losses: Vec<f64> = {
        use rayon::prelude::*;
        examples.par_iter().map(|ex| loss_fn(state, ex)).collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let losses: Vec<f64> = examples.iter().map(|ex| loss_fn(state, ex)).collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_shifted_and_masked() {
        let ex = Example::supervised(0, &[1, 10, 11, 3], &[4, 5, 2]);
        assert_eq!(ex.inputs(), &[1, 10, 11, 3, 4, 5]);
        let (targets, mask) = ex.targets_and_mask();
        assert_eq!(targets, vec![10, 11, 3, 4, 5, 2]);
        assert_eq!(mask, vec![false, false, false, true, true, true]);
        let lm = Example::language_model(0, &[1, 10], &[2]);
        assert_eq!(lm.targets_and_mask().1, vec![true, true]);
    }
}
