use super::{NumericsError, Scalar, Tensor};

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `params` with the matching gradient.
    /// Moment buffers are created lazily on the first call.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>]) -> Result<(), NumericsError> {
        if params.len() != grads.len() {
            return Err(NumericsError::ParamCount { params: params.len(), grads: grads.len() });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(NumericsError::ParamCount { params: params.len(), grads: self.first.len() });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NumericsError::dims("adam_step", p.shape(), g.shape()));
            }
        }
        for (i, p) in params.iter().enumerate() {
            if self.first[i].shape() != p.shape() {
                return Err(NumericsError::dims("adam_step", p.shape(), self.first[i].shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let c1 = F::c(1.0 - self.beta1.powi(t));
        let c2 = F::c(1.0 - self.beta2.powi(t));
        let lr = F::c(self.lr);
        let eps = F::c(self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (F::one() - b1) * gi;
                *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
