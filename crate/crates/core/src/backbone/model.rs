use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackboneError;
use crate::numerics::{Graph, NumericsError, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_context: usize,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            width: 128,
            heads: 4,
            ffn: 256,
            max_context: 256,
            vocab_size: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.layers == 0 || self.width == 0 || self.ffn == 0 || self.vocab_size == 0 || self.max_context == 0 {
            return Err(BackboneError::Config("sizes must be positive".into()));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(BackboneError::Config(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

/// The linear maps of a block that can carry a low-rank update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
    FfnIn,
    FfnOut,
}

impl Projection {
    pub const ALL: [Projection; 6] = [
        Projection::Query,
        Projection::Key,
        Projection::Value,
        Projection::Output,
        Projection::FfnIn,
        Projection::FfnOut,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Projection::Query => "q",
            Projection::Key => "k",
            Projection::Value => "v",
            Projection::Output => "o",
            Projection::FfnIn => "ffn_in",
            Projection::FfnOut => "ffn_out",
        }
    }

    /// `(d_in, d_out)` of the projection.
    pub fn dims(self, config: &ModelConfig) -> (usize, usize) {
        match self {
            Projection::FfnIn => (config.width, config.ffn),
            Projection::FfnOut => (config.ffn, config.width),
            _ => (config.width, config.width),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<F> {
    pub attn_norm: Tensor<F>,
    /// Indexed by [`Projection::index`].
    pub proj: [Tensor<F>; 6],
    pub ffn_norm: Tensor<F>,
}

/// Frozen student weights. The output head is tied to the token embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneWeights<F> {
    pub config: ModelConfig,
    pub embed: Tensor<F>,
    pub positions: Tensor<F>,
    pub layers: Vec<LayerWeights<F>>,
    pub final_norm: Tensor<F>,
    frozen_hash: Option<String>,
}

/// SHA-256 over the shapes and little-endian values of `tensors`.
pub fn tensors_hash<'a, F: Scalar>(tensors: impl IntoIterator<Item = &'a Tensor<F>>) -> String {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    for t in tensors {
        buf.clear();
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.extend_le(&mut buf);
        }
        hasher.update(&buf);
    }
    hex::encode(hasher.finalize())
}

impl<F: Scalar> BackboneWeights<F> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, BackboneError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.width;
        let embed = Tensor::randn(&[config.vocab_size, d], 1.0 / (d as f64).sqrt(), &mut rng);
        let positions = Tensor::randn(&[config.max_context, d], 0.1 / (d as f64).sqrt(), &mut rng);
        let residual_scale = 1.0 / ((2 * config.layers) as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| {
                let proj = Projection::ALL.map(|p| {
                    let (din, dout) = p.dims(config);
                    let mut std = 1.0 / (din as f64).sqrt();
                    if matches!(p, Projection::Output | Projection::FfnOut) {
                        std *= residual_scale;
                    }
                    Tensor::randn(&[din, dout], std, &mut rng)
                });
                LayerWeights {
                    attn_norm: Tensor::full(&[d], F::one()),
                    proj,
                    ffn_norm: Tensor::full(&[d], F::one()),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            embed,
            positions,
            layers,
            final_norm: Tensor::full(&[d], F::one()),
            frozen_hash: None,
        })
    }

    /// Parameters in a fixed order with stable names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = vec![("embed".to_string(), &self.embed), ("positions".to_string(), &self.positions)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layers.{l}.attn_norm"), &layer.attn_norm));
            for p in Projection::ALL {
                out.push((format!("layers.{l}.{}", p.name()), &layer.proj[p.index()]));
            }
            out.push((format!("layers.{l}.ffn_norm"), &layer.ffn_norm));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out
    }

    /// Mutable parameters in the order of [`Self::named_params`]. Fails once frozen.
    pub fn params_mut(&mut self) -> Result<Vec<&mut Tensor<F>>, BackboneError> {
        if self.frozen_hash.is_some() {
            return Err(BackboneError::Frozen);
        }
        let mut out = vec![&mut self.embed, &mut self.positions];
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.attn_norm);
            for p in layer.proj.iter_mut() {
                out.push(p);
            }
            out.push(&mut layer.ffn_norm);
        }
        out.push(&mut self.final_norm);
        Ok(out)
    }

    /// Rebuilds weights from tensors in [`Self::named_params`] order.
    pub fn from_params(config: &ModelConfig, params: Vec<Tensor<F>>) -> Result<Self, BackboneError> {
        let template = Self::init(config, 0)?;
        let expected: Vec<Vec<usize>> = template.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect();
        if params.len() != expected.len() || params.iter().zip(&expected).any(|(p, e)| p.shape() != e.as_slice()) {
            return Err(BackboneError::Config("parameter shapes do not match the model config".into()));
        }
        let mut it = params.into_iter();
        let mut next = || it.next().unwrap();
        let embed = next();
        let positions = next();
        let layers = (0..config.layers)
            .map(|_| {
                let attn_norm = next();
                let proj = [next(), next(), next(), next(), next(), next()];
                let ffn_norm = next();
                LayerWeights { attn_norm, proj, ffn_norm }
            })
            .collect();
        let final_norm = next();
        Ok(Self { config: config.clone(), embed, positions, layers, final_norm, frozen_hash: None })
    }

    pub fn content_hash(&self) -> String {
        tensors_hash(self.named_params().into_iter().map(|(_, t)| t))
    }

    /// Marks the weights frozen and records their content hash.
    pub fn freeze(&mut self) -> String {
        let hash = self.content_hash();
        self.frozen_hash = Some(hash.clone());
        hash
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_hash.is_some()
    }

    pub fn frozen_hash(&self) -> Option<&str> {
        self.frozen_hash.as_deref()
    }

    /// Errors unless frozen and unchanged since freezing.
    pub fn verify_frozen(&self) -> Result<(), BackboneError> {
        match &self.frozen_hash {
            None => Err(BackboneError::NotFrozen),
            Some(h) if *h != self.content_hash() => Err(BackboneError::FrozenHashChanged),
            Some(_) => Ok(()),
        }
    }

    pub fn cast<G: Scalar>(&self) -> BackboneWeights<G> {
        BackboneWeights {
            config: self.config.clone(),
            embed: self.embed.cast(),
            positions: self.positions.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: l.attn_norm.cast(),
                    proj: l.proj.each_ref().map(|p| p.cast()),
                    ffn_norm: l.ffn_norm.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            frozen_hash: self.frozen_hash.clone(),
        }
    }

    /// Registers the weights on a graph; `trainable` marks them for gradients.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> BoundBackbone {
        let mut leaf = |t: &Tensor<F>| g.leaf(t.clone(), trainable);
        BoundBackbone {
            embed: leaf(&self.embed),
            positions: leaf(&self.positions),
            layers: self
                .layers
                .iter()
                .map(|l| BoundLayer {
                    attn_norm: leaf(&l.attn_norm),
                    proj: l.proj.each_ref().map(&mut leaf),
                    ffn_norm: leaf(&l.ffn_norm),
                })
                .collect(),
            final_norm: leaf(&self.final_norm),
        }
    }
}

pub struct BoundLayer {
    pub attn_norm: Var,
    pub proj: [Var; 6],
    pub ffn_norm: Var,
}

/// Graph handles for every backbone parameter, in [`BackboneWeights::named_params`] order.
pub struct BoundBackbone {
    pub embed: Var,
    pub positions: Var,
    pub layers: Vec<BoundLayer>,
    pub final_norm: Var,
}

impl BoundBackbone {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embed, self.positions];
        for l in &self.layers {
            out.push(l.attn_norm);
            out.extend(l.proj);
            out.push(l.ffn_norm);
        }
        out.push(self.final_norm);
        out
    }
}

/// Hook through which adapters add low-rank updates to the frozen projections.
pub trait LayerHook<F: Scalar> {
    /// Called with the block input `H^{l-1}` before any projection of layer `layer`.
    fn begin_layer(
        &mut self,
        g: &mut Graph<F>,
        layer: usize,
        input: Var,
        prompt_len: usize,
    ) -> Result<(), NumericsError>;

    /// Additive update for `proj` of the current layer given its input `x`.
    fn delta(&mut self, g: &mut Graph<F>, layer: usize, proj: Projection, x: Var) -> Result<Option<Var>, NumericsError>;
}

/// The identity hook: plain frozen backbone.
pub struct NoHook;

impl<F: Scalar> LayerHook<F> for NoHook {
    fn begin_layer(&mut self, _: &mut Graph<F>, _: usize, _: Var, _: usize) -> Result<(), NumericsError> {
        Ok(())
    }

    fn delta(&mut self, _: &mut Graph<F>, _: usize, _: Projection, _: Var) -> Result<Option<Var>, NumericsError> {
        Ok(None)
    }
}

fn project<F: Scalar>(
    g: &mut Graph<F>,
    hook: &mut dyn LayerHook<F>,
    layer: usize,
    proj: Projection,
    x: Var,
    w: Var,
) -> Result<Var, NumericsError> {
    let base = g.matmul(x, w)?;
    match hook.delta(g, layer, proj, x)? {
        Some(delta) => g.add(base, delta),
        None => Ok(base),
    }
}

/// Causal decoder pass producing `T×V` logits. `prompt_len` is forwarded to
/// the hook for pooling.
pub fn forward_graph<F: Scalar>(
    g: &mut Graph<F>,
    bound: &BoundBackbone,
    config: &ModelConfig,
    tokens: &[usize],
    prompt_len: usize,
    hook: &mut dyn LayerHook<F>,
) -> Result<Var, BackboneError> {
    if tokens.is_empty() {
        return Err(BackboneError::EmptyInput);
    }
    if tokens.len() > config.max_context {
        return Err(BackboneError::ContextLength { len: tokens.len(), max: config.max_context });
    }
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let tok = g.embed(bound.embed, tokens)?;
    let pos = g.embed(bound.positions, &positions)?;
    let mut h = g.add(tok, pos)?;
    for (l, layer) in bound.layers.iter().enumerate() {
        hook.begin_layer(g, l, h, prompt_len)?;
        let n = g.rms_norm(h, layer.attn_norm)?;
        let q = project(g, hook, l, Projection::Query, n, layer.proj[0])?;
        let k = project(g, hook, l, Projection::Key, n, layer.proj[1])?;
        let v = project(g, hook, l, Projection::Value, n, layer.proj[2])?;
        let att = g.causal_attention(q, k, v, config.heads)?;
        let o = project(g, hook, l, Projection::Output, att, layer.proj[3])?;
        h = g.add(h, o)?;
        let n = g.rms_norm(h, layer.ffn_norm)?;
        let up = project(g, hook, l, Projection::FfnIn, n, layer.proj[4])?;
        let act = g.gelu(up);
        let down = project(g, hook, l, Projection::FfnOut, act, layer.proj[5])?;
        h = g.add(h, down)?;
    }
    let n = g.rms_norm(h, bound.final_norm)?;
    Ok(g.matmul_bt(n, bound.embed)?)
}

/// Gradient-free forward returning the logits tensor.
pub fn forward<F: Scalar>(
    weights: &BackboneWeights<F>,
    tokens: &[usize],
    prompt_len: usize,
    hook: &mut dyn LayerHook<F>,
) -> Result<Tensor<F>, BackboneError> {
    let mut g = Graph::new();
    let bound = weights.bind(&mut g, false);
    let logits = forward_graph(&mut g, &bound, &weights.config, tokens, prompt_len, hook)?;
    Ok(g.value(logits).clone())
}
