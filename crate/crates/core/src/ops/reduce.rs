use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Op, Tape, Values, Var};
use crate::tensor::Tensor;

pub(crate) struct CrossEntropyRecord<T> {
    pub logits: Var,
    labels: Vec<u8>,
    probs: Vec<T>,
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(dim_err!("mean of an empty tensor"));
        }
        let m = t.sum() / T::from_usize(t.numel());
        self.push(Tensor::scalar(m), Op::Mean(x), "mean")
    }

    /// Sums away the last axis: `[..., n] → [...]`.
    pub fn sum_last_axis(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let Some((&n, lead)) = t.shape().split_last() else {
            return Err(dim_err!("sum_last_axis of a scalar"));
        };
        let data = t.data().chunks(n.max(1)).map(|r| r.iter().copied().sum()).collect();
        let out = Tensor::new(lead, data)?;
        self.push(out, Op::SumLastAxis(x), "sum_last_axis")
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() {
            return Err(dim_err!("softmax axis {axis} out of range for {:?}", shape));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = t.data();
        let mut out = vec![T::ZERO; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| src[at(j)]).fold(src[at(0)], T::max);
                let mut z = T::ZERO;
                for j in 0..len {
                    let e = (src[at(j)] - m).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::Softmax { x, outer, len, inner }, "softmax")
    }

    /// Pixel-mean cross-entropy of class-first logits `[K, ...]` against labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let t = self.value(logits);
        let k = t.shape().first().copied().unwrap_or(0);
        if k == 0 || t.numel() / k != labels.len() || labels.is_empty() {
            return Err(dim_err!(
                "cross_entropy: logits {:?} do not match {} labels",
                t.shape(),
                labels.len()
            ));
        }
        if let Some(bad) = labels.iter().find(|l| usize::from(**l) >= k) {
            return Err(contract_err!("label {bad} out of range for {k} classes"));
        }
        let m = labels.len();
        let src = t.data();
        let mut probs = vec![T::ZERO; src.len()];
        let mut total = T::ZERO;
        for p in 0..m {
            let mx = (0..k).map(|c| src[c * m + p]).fold(src[p], T::max);
            let mut z = T::ZERO;
            for c in 0..k {
                let e = (src[c * m + p] - mx).exp();
                probs[c * m + p] = e;
                z += e;
            }
            for c in 0..k {
                probs[c * m + p] /= z;
            }
            total += z.ln() + mx - src[usize::from(labels[p]) * m + p];
        }
        let loss = Tensor::scalar(total / T::from_usize(m));
        let rec = CrossEntropyRecord { logits, labels: labels.to_vec(), probs };
        self.push(loss, Op::CrossEntropy(rec), "cross_entropy")
    }
}

pub(crate) fn softmax_backward<T: Scalar>(
    x: Var,
    y: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    g: &[T],
    grads: &mut Grads<T>,
) {
    let Some(gx) = grads.slot(x) else { return };
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
            for j in 0..len {
                gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
}

pub(crate) fn sum_last_axis_backward<T: Scalar>(x: Var, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let n = *vals.get(x).shape().last().unwrap_or(&1);
    if let Some(gx) = grads.slot(x) {
        for (row, gv) in gx.chunks_mut(n.max(1)).zip(g) {
            row.iter_mut().for_each(|v| *v += *gv);
        }
    }
}

pub(crate) fn cross_entropy_backward<T: Scalar>(r: &CrossEntropyRecord<T>, g: &[T], grads: &mut Grads<T>) {
    let Some(gx) = grads.slot(r.logits) else { return };
    let m = r.labels.len();
    let scale = g[0] / T::from_usize(m);
    for (i, (s, p)) in gx.iter_mut().zip(&r.probs).enumerate() {
        let onehot = if usize::from(r.labels[i % m]) == i / m { T::ONE } else { T::ZERO };
        *s += scale * (*p - onehot);
    }
}
