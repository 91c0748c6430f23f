use super::{FusionError, MergedDelta, RouterParams, StaticCoeffs, TraceLayer};
use crate::backbone::{forward_graph, BackboneWeights, LayerHook, Projection};
use crate::lora::{BoundAdapter, ExpertKind, ExpertSet};
use crate::numerics::{Graph, NumericsError, Scalar, Tensor, Var};

/// How the expert updates are combined at each layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Fusion<F> {
    /// One expert at full weight.
    Single(ExpertKind),
    /// Every expert weighted `1/K`.
    Average,
    /// A pre-merged dense update (TIES or parameter averaging).
    Merged(MergedDelta<F>),
    /// Learned per-layer coefficients, the same for every input.
    Static(StaticCoeffs<F>),
    /// Per-layer router over the pooled prompt context.
    Dynamic(RouterParams<F>),
}

impl<F> Fusion<F> {
    pub fn name(&self) -> String {
        match self {
            Fusion::Single(k) => k.name().to_string(),
            Fusion::Average => "average".into(),
            Fusion::Merged(m) => match m.method {
                super::MergeMethod::Ties { .. } => "ties".into(),
                super::MergeMethod::Average => "param-average".into(),
            },
            Fusion::Static(_) => "static".into(),
            Fusion::Dynamic(_) => "dynamic".into(),
        }
    }
}

enum Mode {
    Single(usize),
    Average,
    Merged(Vec<[Var; 6]>),
    Static(Vec<Var>),
    Dynamic { w: Vec<Var>, b: Vec<Var> },
}

/// [`LayerHook`] adding the fused expert updates to every projection.
pub struct FusionHook {
    experts: Vec<BoundAdapter>,
    mode: Mode,
    /// Weight vector of the current layer (static or routed).
    weights: Option<Var>,
    trace: Option<Vec<TraceLayer>>,
}

impl FusionHook {
    /// Puts the experts on `g` as constants and the fusion parameters as
    /// leaves that require gradients when `trainable`.
    pub fn bind<F: Scalar>(
        g: &mut Graph<F>,
        layers: usize,
        experts: &ExpertSet<F>,
        fusion: &Fusion<F>,
        trainable: bool,
        record_trace: bool,
    ) -> Result<Self, FusionError> {
        let k = experts.len();
        let check_layers = |params: usize| {
            if params == layers {
                Ok(())
            } else {
                Err(FusionError::LayerCount { params, layers })
            }
        };
        check_layers(experts.layers())?;
        let mode = match fusion {
            Fusion::Single(kind) => Mode::Single(
                experts.kinds().iter().position(|e| e == kind).ok_or(FusionError::MissingExpert(*kind))?,
            ),
            Fusion::Average => Mode::Average,
            Fusion::Merged(m) => {
                check_layers(m.layers.len())?;
                Mode::Merged(m.layers.iter().map(|l| l.each_ref().map(|t| g.constant(t.clone()))).collect())
            }
            Fusion::Static(s) => {
                check_layers(s.layers())?;
                if s.experts() != k {
                    return Err(FusionError::ExpertCount { router: s.experts(), experts: k });
                }
                Mode::Static(s.gamma.iter().map(|t| g.leaf(t.clone(), trainable)).collect())
            }
            Fusion::Dynamic(r) => {
                check_layers(r.layers())?;
                if r.experts() != k {
                    return Err(FusionError::ExpertCount { router: r.experts(), experts: k });
                }
                Mode::Dynamic {
                    w: r.w.iter().map(|t| g.leaf(t.clone(), trainable)).collect(),
                    b: r.b.iter().map(|t| g.leaf(t.clone(), trainable)).collect(),
                }
            }
        };
        let experts = match mode {
            Mode::Merged(_) => Vec::new(),
            _ => experts.experts.iter().map(|(_, a)| a.bind(g, false)).collect(),
        };
        Ok(Self { experts, mode, weights: None, trace: record_trace.then(Vec::new) })
    }

    /// Leaves of the fusion parameters in their `params_mut` order.
    pub fn trainable_vars(&self) -> Vec<Var> {
        match &self.mode {
            Mode::Static(gamma) => gamma.clone(),
            Mode::Dynamic { w, b } => w.iter().zip(b).flat_map(|(&w, &b)| [w, b]).collect(),
            _ => Vec::new(),
        }
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceLayer>> {
        self.trace.take()
    }

    fn weighted_sum<F: Scalar>(&self, g: &mut Graph<F>, layer: usize, proj: Projection, x: Var) -> Result<Var, NumericsError> {
        let uniform = F::c(1.0 / self.experts.len() as f64);
        let mut acc: Option<Var> = None;
        for (e, adapter) in self.experts.iter().enumerate() {
            let d = adapter.delta(g, layer, proj, x)?;
            let term = match self.weights {
                Some(w) => g.scale_by(d, w, e)?,
                None => g.scale(d, uniform),
            };
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        acc.ok_or(NumericsError::EmptyDimension("expert set"))
    }
}

impl<F: Scalar> LayerHook<F> for FusionHook {
    fn begin_layer(&mut self, g: &mut Graph<F>, layer: usize, input: Var, prompt_len: usize) -> Result<(), NumericsError> {
        match &self.mode {
            Mode::Static(gamma) => self.weights = Some(gamma[layer]),
            Mode::Dynamic { w, b } => {
                let z = g.mean_rows(input, prompt_len)?;
                let logits = g.matmul(z, w[layer])?;
                let logits = g.add(logits, b[layer])?;
                let alpha = g.softmax_rows(logits)?;
                if let Some(trace) = self.trace.as_mut() {
                    let as_f64 = |t: &Tensor<F>| t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                    trace.push(TraceLayer { layer, pooled: as_f64(g.value(z)), alpha: as_f64(g.value(alpha)) });
                }
                self.weights = Some(alpha);
            }
            _ => {}
        }
        Ok(())
    }

    fn delta(&mut self, g: &mut Graph<F>, layer: usize, proj: Projection, x: Var) -> Result<Option<Var>, NumericsError> {
        match &self.mode {
            Mode::Single(i) => self.experts[*i].delta(g, layer, proj, x).map(Some),
            Mode::Merged(m) => g.matmul(x, m[layer][proj.index()]).map(Some),
            _ => self.weighted_sum(g, layer, proj, x).map(Some),
        }
    }
}

/// Gradient-free fused logits (`T × V`), plus the per-layer routing trace
/// when requested and the strategy is dynamic.
pub fn fused_forward<F: Scalar>(
    backbone: &BackboneWeights<F>,
    experts: &ExpertSet<F>,
    fusion: &Fusion<F>,
    tokens: &[usize],
    prompt_len: usize,
    record_trace: bool,
) -> Result<(Tensor<F>, Option<Vec<TraceLayer>>), crate::Error> {
    let mut g = Graph::new();
    let bound = backbone.bind(&mut g, false);
    let mut hook = FusionHook::bind(&mut g, backbone.config.layers, experts, fusion, false, record_trace)?;
    let logits = forward_graph(&mut g, &bound, &backbone.config, tokens, prompt_len, &mut hook)?;
    Ok((g.value(logits).clone(), hook.take_trace().filter(|t| !t.is_empty())))
}
