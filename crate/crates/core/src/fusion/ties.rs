use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::backbone::{tensors_hash, Projection};
use crate::lora::ExpertSet;
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TiesConfig {
    /// Fraction of entries each expert keeps after trimming.
    pub density: f64,
}

impl Default for TiesConfig {
    fn default() -> Self {
        Self { density: 0.2 }
    }
}

impl TiesConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.density > 0.0 && self.density <= 1.0 {
            Ok(())
        } else {
            Err(FusionError::Density(self.density))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MergeMethod {
    Ties { density: f64 },
    Average,
}

/// Dense per-layer, per-projection update shared by all inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedDelta<F> {
    pub method: MergeMethod,
    /// `layers[l][p.index()]` is `d_in × d_out`.
    pub layers: Vec<[Tensor<F>; 6]>,
}

impl<F: Scalar> MergedDelta<F> {
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for p in Projection::ALL {
                out.push((format!("merged.{l}.{}", p.name()), &layer[p.index()]));
            }
        }
        out
    }

    pub fn from_params(method: MergeMethod, params: Vec<Tensor<F>>) -> Result<Self, FusionError> {
        if params.len() % 6 != 0 {
            return Err(FusionError::NoDeltas);
        }
        let mut it = params.into_iter();
        let mut layers = Vec::new();
        while let Some(first) = it.next() {
            let mut v = vec![first];
            v.extend(it.by_ref().take(5));
            layers.push(v.try_into().map_err(|_| FusionError::NoDeltas)?);
        }
        Ok(Self { method, layers })
    }

    pub fn content_hash(&self) -> String {
        tensors_hash(self.layers.iter().flatten())
    }

    pub fn cast<G: Scalar>(&self) -> MergedDelta<G> {
        MergedDelta {
            method: self.method.clone(),
            layers: self.layers.iter().map(|l| l.each_ref().map(Tensor::cast)).collect(),
        }
    }
}

/// TIES merge of same-shaped deltas: trim each to its largest entries, elect
/// a sign per entry by the sum of survivors (zero sum counts as positive),
/// then average the survivors that agree with the elected sign.
pub fn ties_merge<F: Scalar>(deltas: &[&Tensor<F>], config: &TiesConfig) -> Result<Tensor<F>, FusionError> {
    config.validate()?;
    let first = deltas.first().ok_or(FusionError::NoDeltas)?;
    for d in deltas {
        if d.shape() != first.shape() {
            return Err(FusionError::Shape(first.shape().to_vec(), d.shape().to_vec()));
        }
    }
    let n = first.len();
    let keep = ((config.density * n as f64).ceil() as usize).min(n);
    let trimmed: Vec<Vec<F>> = deltas
        .iter()
        .map(|d| {
            let data = d.data();
            let mut order: Vec<usize> = (0..n).collect();
            // Stable: equal magnitudes keep the lower index.
            order.sort_by(|&a, &b| data[b].abs().partial_cmp(&data[a].abs()).unwrap_or(std::cmp::Ordering::Equal));
            let mut out = vec![F::zero(); n];
            for &i in &order[..keep] {
                out[i] = data[i];
            }
            out
        })
        .collect();
    let mut merged = vec![F::zero(); n];
    for (i, m) in merged.iter_mut().enumerate() {
        let total = trimmed.iter().fold(F::zero(), |acc, t| acc + t[i]);
        let positive = total >= F::zero();
        let (mut sum, mut count) = (F::zero(), 0usize);
        for t in &trimmed {
            let v = t[i];
            if (positive && v > F::zero()) || (!positive && v < F::zero()) {
                sum += v;
                count += 1;
            }
        }
        if count > 0 {
            *m = sum / F::c(count as f64);
        }
    }
    Ok(Tensor::new(first.shape(), merged).expect("shape preserved"))
}

fn dense_deltas<F: Scalar>(experts: &ExpertSet<F>) -> Result<Vec<Vec<[Tensor<F>; 6]>>, crate::Error> {
    experts
        .experts
        .iter()
        .map(|(_, a)| {
            (0..a.layers.len())
                .map(|l| {
                    let v = Projection::ALL
                        .iter()
                        .map(|&p| a.dense_delta(l, p))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(v.try_into().map_err(|_| FusionError::NoDeltas)?)
                })
                .collect()
        })
        .collect()
}

fn merge_with<F: Scalar>(
    experts: &ExpertSet<F>,
    method: MergeMethod,
    mut f: impl FnMut(&[&Tensor<F>]) -> Result<Tensor<F>, FusionError>,
) -> Result<MergedDelta<F>, crate::Error> {
    let dense = dense_deltas(experts)?;
    let layers = (0..experts.layers())
        .map(|l| {
            let v = Projection::ALL
                .iter()
                .map(|p| {
                    let parts: Vec<&Tensor<F>> = dense.iter().map(|e| &e[l][p.index()]).collect();
                    f(&parts)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(v.try_into().map_err(|_| FusionError::NoDeltas)?)
        })
        .collect::<Result<Vec<_>, crate::Error>>()?;
    Ok(MergedDelta { method, layers })
}

/// TIES merge of the composed expert updates. Expects the three fused experts.
pub fn merge_ties<F: Scalar>(experts: &ExpertSet<F>, config: &TiesConfig) -> Result<MergedDelta<F>, crate::Error> {
    config.validate()?;
    if experts.len() != 3 {
        return Err(FusionError::TiesExperts { expected: 3, got: experts.len() }.into());
    }
    merge_with(experts, MergeMethod::Ties { density: config.density }, |parts| ties_merge(parts, config))
}

/// Arithmetic mean of the composed expert updates.
pub fn merge_average<F: Scalar>(experts: &ExpertSet<F>) -> Result<MergedDelta<F>, crate::Error> {
    let inv = F::c(1.0 / experts.len() as f64);
    merge_with(experts, MergeMethod::Average, |parts| {
        let mut acc = parts[0].clone();
        for p in &parts[1..] {
            acc.add_assign(p).map_err(|_| FusionError::Shape(acc.shape().to_vec(), p.shape().to_vec()))?;
        }
        Ok(acc.scale(inv))
    })
}
