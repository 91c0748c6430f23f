//! Dense tensors, a gradient tape and the Adam optimizer.

mod adam;
mod graph;
mod scalar;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not match {len} data values")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("{0}: empty last dimension")]
    EmptyDimension(&'static str),
    #[error("empty loss support")]
    EmptyLossSupport,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("width {dim} is not divisible by {heads} heads")]
    HeadSplit { dim: usize, heads: usize },
    #[error("cannot pool {count} rows out of {rows}")]
    PoolRange { count: usize, rows: usize },
    #[error("{params} parameters but {grads} gradients or moments")]
    ParamCount { params: usize, grads: usize },
}

impl NumericsError {
    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Self::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
