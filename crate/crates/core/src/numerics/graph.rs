//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so creation order is a valid
//! topological order and `backward` simply walks the tape in reverse.

use super::scalar::{mm, mm_at_acc, mm_bt_acc};
use super::tensor::softmax_in_place;
use super::{NumericsError, Scalar, Tensor};

const RMS_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    ScaleBy { x: Var, w: Var, index: usize },
    Sum(Var),
    SoftmaxRows(Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<F> },
    Gelu(Var),
    Embed { table: Var, ids: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<F> },
    MeanRows { x: Var, count: usize },
    Nll { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<F>, count: usize },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Gradient tape. One graph per forward pass; graphs are not shared across threads.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros of `shape` when nothing flowed into it.
    pub fn take_or_zeros(&mut self, var: Var, shape: &[usize]) -> Tensor<F> {
        self.grads
            .get_mut(var.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn two_d(t: &Tensor<impl Scalar>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` (used for the tied output projection).
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = two_d(self.value(a));
        let (n, k2) = two_d(self.value(b));
        if k != k2 {
            return Err(NumericsError::dims(
                "matmul_bt",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = vec![F::zero(); m * n];
        mm_bt_acc(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMulBT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(NumericsError::dims("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(x.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// `x · w[index]`, with `w` a tensor of weights (e.g. one routing vector).
    pub fn scale_by(&mut self, x: Var, w: Var, index: usize) -> Result<Var, NumericsError> {
        let weights = self.value(w);
        if index >= weights.len() {
            return Err(NumericsError::IndexOutOfRange { index, len: weights.len() });
        }
        let s = weights.data()[index];
        let value = self.value(x).scale(s);
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::ScaleBy { x, w, index }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let value = self.value(x).softmax_rows()?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    /// Root-mean-square normalisation of each row followed by a learned gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var, NumericsError> {
        let (rows, cols) = two_d(self.value(x));
        if self.value(gain).len() != cols {
            return Err(NumericsError::dims("rms_norm", self.value(x).shape(), self.value(gain).shape()));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let mut out = vec![F::zero(); rows * cols];
        let mut inv_rms = Vec::with_capacity(rows);
        let n = F::c(cols as f64);
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let ms = row.iter().map(|&v| v * v).sum::<F>() / n;
            let inv = F::one() / (ms + F::c(RMS_EPS)).sqrt();
            inv_rms.push(inv);
            for c in 0..cols {
                out[r * cols + c] = row[c] * inv * g[c];
            }
        }
        let value = Tensor::new(self.value(x).shape(), out)?;
        let rg = self.rg(x) || self.rg(gain);
        Ok(self.push(value, Op::RmsNorm { x, gain, inv_rms }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let half = F::c(0.5);
        let c = F::c(GELU_C);
        let a = F::c(0.044715);
        let value = self
            .value(x)
            .map(|v| half * v * (F::one() + (c * (v + a * v * v * v)).tanh()));
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    /// Row gather from an embedding table.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        let (vocab, dim) = two_d(t);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(NumericsError::IndexOutOfRange { index: id, len: vocab });
            }
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(&[ids.len(), dim], out)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::Embed { table, ids: ids.to_vec() }, rg))
    }

    /// Causal multi-head scaled dot-product attention over `T×d` projections.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, NumericsError> {
        let (t, d) = two_d(self.value(q));
        if self.value(k).shape() != self.value(q).shape() || self.value(v).shape() != self.value(q).shape() {
            return Err(NumericsError::dims("causal_attention", self.value(q).shape(), self.value(k).shape()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::HeadSplit { dim: d, heads });
        }
        let dh = d / heads;
        let scale = F::one() / F::c(dh as f64).sqrt();
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![F::zero(); heads * t * t];
        let mut out = vec![F::zero(); t * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..t {
                let p = &mut probs[(h * t + i) * t..(h * t + i) * t + i + 1];
                let qi = &qs[i * d + off..i * d + off + dh];
                for (j, pj) in p.iter_mut().enumerate() {
                    let kj = &ks[j * d + off..j * d + off + dh];
                    *pj = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<F>() * scale;
                }
                softmax_in_place(p);
                let o = &mut out[i * d + off..i * d + off + dh];
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &vs[j * d + off..j * d + off + dh];
                    for (oc, &vc) in o.iter_mut().zip(vj) {
                        *oc += pj * vc;
                    }
                }
            }
        }
        let value = Tensor::new(&[t, d], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(value, Op::Attention { q, k, v, heads, probs }, rg))
    }

    /// Mean of the first `count` rows, as a `1×cols` tensor.
    pub fn mean_rows(&mut self, x: Var, count: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = two_d(self.value(x));
        if count == 0 || count > rows {
            return Err(NumericsError::PoolRange { count, rows });
        }
        let xs = self.value(x).data();
        let mut out = vec![F::zero(); cols];
        for r in 0..count {
            for (o, &v) in out.iter_mut().zip(&xs[r * cols..(r + 1) * cols]) {
                *o += v;
            }
        }
        let n = F::c(count as f64);
        out.iter_mut().for_each(|o| *o /= n);
        let value = Tensor::new(&[1, cols], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MeanRows { x, count }, rg))
    }

    /// Mean over masked positions of `−log softmax(logits)[target]`.
    pub fn masked_next_token_nll(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let (t, vocab) = two_d(self.value(logits));
        if targets.len() != t || mask.len() != t {
            return Err(NumericsError::dims("masked_next_token_nll", self.value(logits).shape(), &[targets.len(), mask.len()]));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NumericsError::EmptyLossSupport);
        }
        let ls = self.value(logits).data();
        let mut probs = vec![F::zero(); t * vocab];
        let mut total = F::zero();
        for i in 0..t {
            if !mask[i] {
                continue;
            }
            if targets[i] >= vocab {
                return Err(NumericsError::IndexOutOfRange { index: targets[i], len: vocab });
            }
            let row = &ls[i * vocab..(i + 1) * vocab];
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
            total += lse - row[targets[i]];
            let p = &mut probs[i * vocab..(i + 1) * vocab];
            p.copy_from_slice(row);
            softmax_in_place(p);
        }
        let value = Tensor::scalar(total / F::c(count as f64));
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::Nll { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Only nodes that require gradients
    /// receive them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NotScalar(self.value(loss).shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(vec![F::one()]);
        }
        for i in (0..n).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (&node.op, g) {
                    (Op::Leaf, Some(g)) if node.requires_grad => {
                        Some(Tensor::new(node.value.shape(), g).expect("grad shape"))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    fn propagate(&self, node: &Node<F>, dy: &[F], grads: &mut [Option<Vec<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = two_d(self.value(*a));
                let n = self.value(*b).cols();
                if let Some(da) = self.slot(grads, *a) {
                    mm_bt_acc(m, n, k, dy, self.value(*b).data(), da);
                }
                if let Some(db) = self.slot(grads, *b) {
                    mm_at_acc(k, m, n, self.value(*a).data(), dy, db);
                }
            }
            Op::MatMulBT(a, b) => {
                let (m, k) = two_d(self.value(*a));
                let n = self.value(*b).rows();
                if let Some(da) = self.slot(grads, *a) {
                    mm(m, n, k, dy, self.value(*b).data(), da, true);
                }
                if let Some(db) = self.slot(grads, *b) {
                    mm_at_acc(n, m, k, dy, self.value(*a).data(), db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(dy).for_each(|(g, &u)| *g += u);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    let bv = self.value(*b).data();
                    da.iter_mut().zip(dy).zip(bv).for_each(|((g, &u), &w)| *g += u * w);
                }
                if let Some(db) = self.slot(grads, *b) {
                    let av = self.value(*a).data();
                    db.iter_mut().zip(dy).zip(av).for_each(|((g, &u), &w)| *g += u * w);
                }
            }
            Op::Scale(x, s) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(dy).for_each(|(g, &u)| *g += u * *s);
                }
            }
            Op::ScaleBy { x, w, index } => {
                let s = self.value(*w).data()[*index];
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(dy).for_each(|(g, &u)| *g += u * s);
                }
                if self.rg(*w) {
                    let xv = self.value(*x).data();
                    let contribution: F = dy.iter().zip(xv).map(|(&u, &v)| u * v).sum();
                    if let Some(dw) = self.slot(grads, *w) {
                        dw[*index] += contribution;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|g| *g += dy[0]);
                }
            }
            Op::SoftmaxRows(x) => {
                let cols = node.value.cols();
                let y = node.value.data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((dxr, yr), dyr) in dx.chunks_mut(cols).zip(y.chunks(cols)).zip(dy.chunks(cols)) {
                        let dot: F = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
                        for ((g, &yv), &u) in dxr.iter_mut().zip(yr).zip(dyr) {
                            *g += yv * (u - dot);
                        }
                    }
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (rows, cols) = two_d(self.value(*x));
                let xs = self.value(*x).data();
                let g = self.value(*gain).data();
                if let Some(dg) = self.slot(grads, *gain) {
                    for r in 0..rows {
                        for c in 0..cols {
                            dg[c] += dy[r * cols + c] * xs[r * cols + c] * inv_rms[r];
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let n = F::c(cols as f64);
                    for r in 0..rows {
                        let inv = inv_rms[r];
                        let row = r * cols..(r + 1) * cols;
                        let dot: F = xs[row.clone()]
                            .iter()
                            .zip(&dy[row.clone()])
                            .zip(g)
                            .map(|((&xv, &u), &gv)| u * gv * xv * inv)
                            .sum::<F>()
                            / n;
                        for c in 0..cols {
                            let xhat = xs[r * cols + c] * inv;
                            let dxhat = dy[r * cols + c] * g[c];
                            dx[r * cols + c] += (dxhat - xhat * dot) * inv;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let xs = self.value(*x).data();
                    let (half, c, a) = (F::c(0.5), F::c(GELU_C), F::c(0.044715));
                    let three = F::c(3.0);
                    for ((g, &v), &u) in dx.iter_mut().zip(xs).zip(dy) {
                        let t = (c * (v + a * v * v * v)).tanh();
                        let d = half * (F::one() + t)
                            + half * v * (F::one() - t * t) * c * (F::one() + three * a * v * v);
                        *g += u * d;
                    }
                }
            }
            Op::Embed { table, ids } => {
                let dim = self.value(*table).cols();
                if let Some(dt) = self.slot(grads, *table) {
                    for (t, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            dt[id * dim + c] += dy[t * dim + c];
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => self.attention_backward(*q, *k, *v, *heads, probs, dy, grads),
            Op::MeanRows { x, count } => {
                if let Some(dx) = self.slot(grads, *x) {
                    let cols = dy.len();
                    let n = F::c(*count as f64);
                    for r in 0..*count {
                        for c in 0..cols {
                            dx[r * cols + c] += dy[c] / n;
                        }
                    }
                }
            }
            Op::Nll { logits, targets, mask, probs, count } => {
                let vocab = self.value(*logits).cols();
                if let Some(dl) = self.slot(grads, *logits) {
                    let s = dy[0] / F::c(*count as f64);
                    for (i, (&m, &target)) in mask.iter().zip(targets).enumerate() {
                        if !m {
                            continue;
                        }
                        for c in 0..vocab {
                            let mut p = probs[i * vocab + c];
                            if c == target {
                                p -= F::one();
                            }
                            dl[i * vocab + c] += s * p;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[F],
        dy: &[F],
        grads: &mut [Option<Vec<F>>],
    ) {
        let (t, d) = two_d(self.value(q));
        let dh = d / heads;
        let scale = F::one() / F::c(dh as f64).sqrt();
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![F::zero(); t * d];
        let mut dk = vec![F::zero(); t * d];
        let mut dv = vec![F::zero(); t * d];
        let mut dp = vec![F::zero(); t];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..t {
                let p = &probs[(h * t + i) * t..(h * t + i) * t + i + 1];
                let dyi = &dy[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let vj = &vs[j * d + off..j * d + off + dh];
                    dp[j] = dyi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    let dvj = &mut dv[j * d + off..j * d + off + dh];
                    for (g, &u) in dvj.iter_mut().zip(dyi) {
                        *g += p[j] * u;
                    }
                }
                let dot: F = p.iter().zip(&dp[..=i]).map(|(&a, &b)| a * b).sum();
                for j in 0..=i {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    for c in 0..dh {
                        dq[i * d + off + c] += ds * ks[j * d + off + c];
                        dk[j * d + off + c] += ds * qs[i * d + off + c];
                    }
                }
            }
        }
        for (var, g) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(slot) = self.slot(grads, var) {
                slot.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let c = g.constant(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(NumericsError::NotScalar(_))));
    }

    #[test]
    fn nll_closed_forms() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::zeros(&[3, 4]));
        let loss = g.masked_next_token_nll(l, &[0, 3, 2], &[true, false, true]).unwrap();
        assert!((g.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);

        let l = g.constant(Tensor::zeros(&[1, 2]));
        let loss = g.masked_next_token_nll(l, &[1], &[true]).unwrap();
        assert!((g.value(loss).data()[0] - 2f64.ln()).abs() < 1e-12);

        let l = g.constant(Tensor::new(&[2, 3], vec![100.0, 0.0, 0.0, 0.0, 0.0, 100.0]).unwrap());
        let loss = g.masked_next_token_nll(l, &[0, 2], &[true, true]).unwrap();
        assert!(g.value(loss).data()[0].abs() < 1e-12);

        let l = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            g.masked_next_token_nll(l, &[0, 1], &[false, false]),
            Err(NumericsError::EmptyLossSupport)
        ));
    }

    #[test]
    fn mean_rows_rejects_empty_pool() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.mean_rows(x, 0).is_err());
        assert!(g.mean_rows(x, 4).is_err());
    }
}
