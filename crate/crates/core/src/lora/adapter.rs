use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LoraError;
use crate::backbone::{tensors_hash, InputVariant, LayerHook, ModelConfig, Projection};
use crate::numerics::{Graph, NumericsError, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertKind {
    Base,
    #[serde(rename = "high")]
    HighLevel,
    #[serde(rename = "fine")]
    FineGrained,
    #[serde(rename = "merged")]
    MergedBaseline,
}

impl ExpertKind {
    /// The experts that take part in fusion, in routing order.
    pub const FUSED: [ExpertKind; 3] = [ExpertKind::Base, ExpertKind::HighLevel, ExpertKind::FineGrained];

    pub fn variant(self) -> InputVariant {
        match self {
            ExpertKind::Base => InputVariant::Raw,
            ExpertKind::HighLevel => InputVariant::High,
            ExpertKind::FineGrained => InputVariant::Fine,
            ExpertKind::MergedBaseline => InputVariant::Merged,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExpertKind::Base => "base",
            ExpertKind::HighLevel => "high",
            ExpertKind::FineGrained => "fine",
            ExpertKind::MergedBaseline => "merged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(ExpertKind::Base),
            "high" => Some(ExpertKind::HighLevel),
            "fine" => Some(ExpertKind::FineGrained),
            "merged" => Some(ExpertKind::MergedBaseline),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub scale: f64,
    pub init_std: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 16, scale: 16.0, init_std: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraPair<F> {
    /// `d_in × r`
    pub a: Tensor<F>,
    /// `r × d_out`
    pub b: Tensor<F>,
}

/// Low-rank updates for every projection of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<F> {
    pub rank: usize,
    pub scale: f64,
    /// `layers[l][p.index()]`
    pub layers: Vec<[LoraPair<F>; 6]>,
}

impl<F: Scalar> LoraAdapter<F> {
    /// `A ~ N(0, init_std²)`, `B = 0`.
    pub fn init(model: &ModelConfig, config: &LoraConfig, seed: u64) -> Result<Self, LoraError> {
        if config.rank == 0 {
            return Err(LoraError::ZeroRank);
        }
        let limit = Projection::ALL
            .iter()
            .map(|p| {
                let (i, o) = p.dims(model);
                i.min(o)
            })
            .min()
            .unwrap_or(0);
        if config.rank >= limit {
            return Err(LoraError::RankTooLarge { rank: config.rank, limit });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..model.layers)
            .map(|_| {
                Projection::ALL.map(|p| {
                    let (din, dout) = p.dims(model);
                    LoraPair {
                        a: Tensor::randn(&[din, config.rank], config.init_std, &mut rng),
                        b: Tensor::zeros(&[config.rank, dout]),
                    }
                })
            })
            .collect();
        Ok(Self { rank: config.rank, scale: config.scale, layers })
    }

    /// `s / r`
    pub fn multiplier(&self) -> f64 {
        self.scale / self.rank as f64
    }

    fn pair(&self, layer: usize, proj: Projection) -> Result<&LoraPair<F>, LoraError> {
        self.layers
            .get(layer)
            .map(|l| &l[proj.index()])
            .ok_or(LoraError::LayerNotAdapted(layer))
    }

    /// `(s/r) · H·A·B`
    pub fn lora_delta(&self, h: &Tensor<F>, layer: usize, proj: Projection) -> Result<Tensor<F>, crate::Error> {
        let pair = self.pair(layer, proj)?;
        Ok(h.matmul(&pair.a)?.matmul(&pair.b)?.scale(F::c(self.multiplier())))
    }

    /// Composed dense update `(s/r) · A·B`.
    pub fn dense_delta(&self, layer: usize, proj: Projection) -> Result<Tensor<F>, crate::Error> {
        let pair = self.pair(layer, proj)?;
        Ok(pair.a.matmul(&pair.b)?.scale(F::c(self.multiplier())))
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for p in Projection::ALL {
                let pair = &layer[p.index()];
                out.push((format!("layers.{l}.{}.a", p.name()), &pair.a));
                out.push((format!("layers.{l}.{}.b", p.name()), &pair.b));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            for pair in layer.iter_mut() {
                out.push(&mut pair.a);
                out.push(&mut pair.b);
            }
        }
        out
    }

    /// Rebuilds an adapter from tensors in [`Self::named_params`] order.
    pub fn from_params(rank: usize, scale: f64, params: Vec<Tensor<F>>) -> Result<Self, LoraError> {
        if params.len() % 12 != 0 {
            return Err(LoraError::Incompatible(format!("{} tensors is not a whole number of layers", params.len())));
        }
        let mut it = params.into_iter();
        let mut layers = Vec::new();
        while let Some(a0) = it.next() {
            let mut pairs = Vec::with_capacity(6);
            let mut a = Some(a0);
            for _ in 0..6 {
                let a = a.take().or_else(|| it.next()).unwrap();
                let b = it.next().unwrap();
                if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != rank || b.shape()[0] != rank {
                    return Err(LoraError::Incompatible("factor shapes disagree with rank".into()));
                }
                pairs.push(LoraPair { a, b });
            }
            layers.push(pairs.try_into().map_err(|_| LoraError::Incompatible("layer".into()))?);
        }
        Ok(Self { rank, scale, layers })
    }

    pub fn content_hash(&self) -> String {
        tensors_hash(self.named_params().into_iter().map(|(_, t)| t))
    }

    /// Per-layer, per-projection `(d_in, d_out)` signature.
    pub fn signature(&self) -> Vec<[(usize, usize); 6]> {
        self.layers
            .iter()
            .map(|l| l.each_ref().map(|p| (p.a.shape()[0], p.b.shape()[1])))
            .collect()
    }

    pub fn cast<G: Scalar>(&self) -> LoraAdapter<G> {
        LoraAdapter {
            rank: self.rank,
            scale: self.scale,
            layers: self
                .layers
                .iter()
                .map(|l| l.each_ref().map(|p| LoraPair { a: p.a.cast(), b: p.b.cast() }))
                .collect(),
        }
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> BoundAdapter {
        BoundAdapter {
            layers: self
                .layers
                .iter()
                .map(|l| l.each_ref().map(|p| (g.leaf(p.a.clone(), trainable), g.leaf(p.b.clone(), trainable))))
                .collect(),
            multiplier: self.multiplier(),
        }
    }
}

/// Graph handles of an adapter's factors.
pub struct BoundAdapter {
    pub layers: Vec<[(Var, Var); 6]>,
    pub multiplier: f64,
}

impl BoundAdapter {
    /// `(s/r) · x·A·B` on the graph.
    pub fn delta<F: Scalar>(&self, g: &mut Graph<F>, layer: usize, proj: Projection, x: Var) -> Result<Var, NumericsError> {
        let (a, b) = self.layers[layer][proj.index()];
        let low = g.matmul(x, a)?;
        let up = g.matmul(low, b)?;
        Ok(if self.multiplier == 1.0 { up } else { g.scale(up, F::c(self.multiplier)) })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.iter().flat_map(|&(a, b)| [a, b])).collect()
    }
}

/// Hook applying one adapter at full weight.
pub struct AdapterHook<'a> {
    pub adapter: &'a BoundAdapter,
}

impl<F: Scalar> LayerHook<F> for AdapterHook<'_> {
    fn begin_layer(&mut self, _: &mut Graph<F>, _: usize, _: Var, _: usize) -> Result<(), NumericsError> {
        Ok(())
    }

    fn delta(&mut self, g: &mut Graph<F>, layer: usize, proj: Projection, x: Var) -> Result<Option<Var>, NumericsError> {
        self.adapter.delta(g, layer, proj, x).map(Some)
    }
}

/// The experts that are fused, in routing order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSet<F> {
    pub experts: Vec<(ExpertKind, LoraAdapter<F>)>,
}

impl<F: Scalar> ExpertSet<F> {
    pub fn new(experts: Vec<(ExpertKind, LoraAdapter<F>)>) -> Result<Self, LoraError> {
        let Some((_, first)) = experts.first() else {
            return Err(LoraError::Incompatible("empty expert set".into()));
        };
        if experts.len() > 1 && experts.iter().any(|(k, _)| *k == ExpertKind::MergedBaseline) {
            return Err(LoraError::Incompatible("the merged baseline does not take part in fusion".into()));
        }
        let sig = first.signature();
        for (kind, a) in &experts {
            if a.rank != first.rank || a.scale != first.scale || a.signature() != sig {
                return Err(LoraError::Incompatible(format!("{} differs from {}", kind.name(), experts[0].0.name())));
            }
        }
        Ok(Self { experts })
    }

    /// A set holding one adapter, for evaluating it on its own.
    pub fn single(kind: ExpertKind, adapter: LoraAdapter<F>) -> Self {
        Self { experts: vec![(kind, adapter)] }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn layers(&self) -> usize {
        self.experts[0].1.layers.len()
    }

    pub fn kinds(&self) -> Vec<ExpertKind> {
        self.experts.iter().map(|(k, _)| *k).collect()
    }

    pub fn adapter(&self, kind: ExpertKind) -> Option<&LoraAdapter<F>> {
        self.experts.iter().find(|(k, _)| *k == kind).map(|(_, a)| a)
    }

    pub fn hashes(&self) -> Vec<(ExpertKind, String)> {
        self.experts.iter().map(|(k, a)| (*k, a.content_hash())).collect()
    }

    pub fn cast<G: Scalar>(&self) -> ExpertSet<G> {
        ExpertSet { experts: self.experts.iter().map(|(k, a)| (*k, a.cast())).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelConfig {
        ModelConfig { layers: 2, width: 8, heads: 2, ffn: 12, max_context: 16, vocab_size: 10 }
    }

    #[test]
    fn fresh_adapter_has_zero_delta() {
        let a = LoraAdapter::<f64>::init(&model(), &LoraConfig { rank: 2, ..Default::default() }, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = Tensor::randn(&[3, 8], 1.0, &mut rng);
        let d = a.lora_delta(&h, 1, Projection::Value).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded_and_rank_checked() {
        let cfg = LoraConfig { rank: 2, ..Default::default() };
        let a = LoraAdapter::<f32>::init(&model(), &cfg, 4).unwrap();
        let b = LoraAdapter::<f32>::init(&model(), &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            LoraAdapter::<f32>::init(&model(), &LoraConfig { rank: 8, ..Default::default() }, 0),
            Err(LoraError::RankTooLarge { rank: 8, limit: 8 })
        ));
        assert!(LoraAdapter::<f32>::init(&model(), &LoraConfig { rank: 0, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn default_shapes() {
        let m = ModelConfig { vocab_size: 20, ..ModelConfig::default() };
        let a = LoraAdapter::<f32>::init(&m, &LoraConfig::default(), 0).unwrap();
        assert_eq!(a.layers[0][0].a.shape(), &[128, 16]);
        assert_eq!(a.layers[0][0].b.shape(), &[16, 128]);
        assert_eq!(a.multiplier(), 1.0);
    }

    #[test]
    fn full_rank_identity_matches_dense_update() {
        // Oracle: with A = I and B = ΔW the update is the dense product H·ΔW.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 8;
        let dense_w = Tensor::<f64>::randn(&[d, d], 1.0, &mut rng);
        let h = Tensor::<f64>::randn(&[4, d], 1.0, &mut rng);
        let mut a = LoraAdapter::<f64>::init(&model(), &LoraConfig { rank: 2, scale: 2.0, init_std: 0.02 }, 0).unwrap();
        a.rank = d;
        a.scale = d as f64;
        a.layers[0][0] = LoraPair { a: Tensor::identity(d), b: dense_w.clone() };
        let delta = a.lora_delta(&h, 0, Projection::Query).unwrap();
        let mut expected = vec![0.0; 4 * d];
        for i in 0..4 {
            for j in 0..d {
                expected[i * d + j] = (0..d).map(|k| h.get(i, k) * dense_w.get(k, j)).sum();
            }
        }
        for (x, y) in delta.data().iter().zip(&expected) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn params_round_trip() {
        let a = LoraAdapter::<f32>::init(&model(), &LoraConfig { rank: 3, ..Default::default() }, 2).unwrap();
        let tensors: Vec<Tensor<f32>> = a.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(LoraAdapter::from_params(3, a.scale, tensors).unwrap(), a);
    }

    #[test]
    fn expert_set_rejects_mismatch() {
        let cfg = LoraConfig { rank: 2, ..Default::default() };
        let a = LoraAdapter::<f32>::init(&model(), &cfg, 1).unwrap();
        let b = LoraAdapter::<f32>::init(&model(), &LoraConfig { rank: 3, ..cfg.clone() }, 1).unwrap();
        assert!(ExpertSet::new(vec![(ExpertKind::Base, a.clone()), (ExpertKind::HighLevel, b)]).is_err());
        assert!(ExpertSet::new(vec![(ExpertKind::Base, a.clone()), (ExpertKind::MergedBaseline, a.clone())]).is_err());
        assert!(ExpertSet::new(vec![(ExpertKind::Base, a.clone()), (ExpertKind::FineGrained, a.clone())]).is_ok());
        assert!(ExpertSet::new(vec![(ExpertKind::MergedBaseline, a)]).is_ok());
    }
}
