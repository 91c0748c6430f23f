use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::backbone::tensors_hash;
use crate::numerics::{Scalar, Tensor};

/// Per-layer router `α^l = softmax(W^l z^l + b^l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterParams<F> {
    /// `d × K` per layer.
    pub w: Vec<Tensor<F>>,
    /// `1 × K` per layer.
    pub b: Vec<Tensor<F>>,
}

impl<F: Scalar> RouterParams<F> {
    /// Zero weights: uniform routing at every layer.
    pub fn zeros(layers: usize, width: usize, experts: usize) -> Self {
        Self {
            w: (0..layers).map(|_| Tensor::zeros(&[width, experts])).collect(),
            b: (0..layers).map(|_| Tensor::zeros(&[1, experts])).collect(),
        }
    }

    /// Small Gaussian weights, used by tests and the demo.
    pub fn random(layers: usize, width: usize, experts: usize, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w: (0..layers).map(|_| Tensor::randn(&[width, experts], std, &mut rng)).collect(),
            b: (0..layers).map(|_| Tensor::randn(&[1, experts], std, &mut rng)).collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.w.len()
    }

    pub fn experts(&self) -> usize {
        self.b.first().map_or(0, |b| b.len())
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (l, (w, b)) in self.w.iter().zip(&self.b).enumerate() {
            out.push((format!("router.{l}.w"), w));
            out.push((format!("router.{l}.b"), b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.w.iter_mut().zip(self.b.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn from_params(params: Vec<Tensor<F>>) -> Self {
        let (mut w, mut b) = (Vec::new(), Vec::new());
        for (i, t) in params.into_iter().enumerate() {
            if i % 2 == 0 {
                w.push(t)
            } else {
                b.push(t)
            }
        }
        Self { w, b }
    }

    pub fn content_hash(&self) -> String {
        tensors_hash(self.named_params().into_iter().map(|(_, t)| t))
    }

    pub fn cast<G: Scalar>(&self) -> RouterParams<G> {
        RouterParams { w: self.w.iter().map(Tensor::cast).collect(), b: self.b.iter().map(Tensor::cast).collect() }
    }
}

/// Input-agnostic per-layer expert coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticCoeffs<F> {
    /// `1 × K` per layer.
    pub gamma: Vec<Tensor<F>>,
}

impl<F: Scalar> StaticCoeffs<F> {
    /// `γ^l_e = 1/K`, which reproduces averaging.
    pub fn uniform(layers: usize, experts: usize) -> Self {
        let v = F::c(1.0 / experts as f64);
        Self { gamma: (0..layers).map(|_| Tensor::full(&[1, experts], v)).collect() }
    }

    pub fn layers(&self) -> usize {
        self.gamma.len()
    }

    pub fn experts(&self) -> usize {
        self.gamma.first().map_or(0, |g| g.len())
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        self.gamma.iter().enumerate().map(|(l, g)| (format!("static.{l}.gamma"), g)).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.gamma.iter_mut().collect()
    }

    pub fn content_hash(&self) -> String {
        tensors_hash(self.gamma.iter())
    }

    pub fn cast<G: Scalar>(&self) -> StaticCoeffs<G> {
        StaticCoeffs { gamma: self.gamma.iter().map(Tensor::cast).collect() }
    }
}

/// Router weights for one layer from the block input `h_prev` (`T × d`),
/// pooled over the first `prompt_len` rows.
pub fn route_weights<F: Scalar>(
    h_prev: &Tensor<F>,
    prompt_len: usize,
    router: &RouterParams<F>,
    layer: usize,
) -> Result<(Vec<F>, Vec<F>), crate::Error> {
    if prompt_len == 0 {
        return Err(FusionError::EmptyPrompt.into());
    }
    if layer >= router.layers() {
        return Err(FusionError::LayerCount { params: router.layers(), layers: layer + 1 }.into());
    }
    let rows = prompt_len.min(h_prev.rows());
    let d = h_prev.cols();
    let mut z = vec![F::zero(); d];
    for t in 0..rows {
        for (zi, &h) in z.iter_mut().zip(h_prev.row(t)) {
            *zi += h;
        }
    }
    let n = F::c(rows as f64);
    z.iter_mut().for_each(|v| *v /= n);
    let zt = Tensor::new(&[1, d], z.clone())?;
    let logits = zt.matmul(&router.w[layer])?.add(&router.b[layer])?;
    Ok((z, logits.softmax_rows()?.into_vec()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLayer {
    pub layer: usize,
    /// Pooled prompt context `z^l`.
    pub pooled: Vec<f64>,
    /// Expert weights `α^l`, in expert-set order.
    pub alpha: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RouteTrace {
    pub session_id: u64,
    pub layers: Vec<TraceLayer>,
}

impl RouteTrace {
    /// `layer,alpha_base,alpha_high,alpha_fine` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "layer,alpha_base,alpha_high,alpha_fine")?;
        for l in &self.layers {
            let alphas: Vec<String> = l.alpha.iter().map(|a| format!("{a:.6}")).collect();
            writeln!(out, "{},{}", l.layer, alphas.join(","))?;
        }
        Ok(())
    }
}
