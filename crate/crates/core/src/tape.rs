//! Reverse-mode automatic differentiation over a linear operation record.
//!
//! Every op appends a node holding its forward value plus whatever the
//! backward rule needs. `backward` walks the record in exact reverse order,
//! accumulates gradients and clears the recorded ops, leaving values and
//! leaf gradients readable.
//!
//! Parameter tensors are borrowed rather than copied, so a tape lives no
//! longer than the model it reads from. A parameter registered twice maps to
//! the same node and its gradient contributions are summed.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::mem;

use crate::error::{contract_err, Error, Result};
use crate::ops::{conv, elementwise, linalg, norm, reduce, resize, shape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Relu(Var),
    Gelu(Var),
    Matmul(linalg::MatmulRecord),
    Conv2d(conv::ConvRecord<T>),
    Upsample {
        x: Var,
        geom: resize::ResizeGeometry,
    },
    LayerNorm(norm::NormRecord<T>),
    GroupNorm(norm::NormRecord<T>),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    SumLastAxis(Var),
    CrossEntropy(reduce::CrossEntropyRecord<T>),
}

impl<T> Op<T> {
    fn for_each_input(&self, mut f: impl FnMut(Var)) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                f(*a);
                f(*b);
            }
            Op::AddBias { x, bias } => {
                f(*x);
                f(*bias);
            }
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumLastAxis(x)
            | Op::Upsample { x, .. }
            | Op::Softmax { x, .. }
            | Op::Permute { x, .. } => f(*x),
            Op::Matmul(r) => {
                f(r.a);
                f(r.b);
            }
            Op::Conv2d(r) => {
                f(r.x);
                f(r.w);
                if let Some(b) = r.bias {
                    f(b);
                }
            }
            Op::LayerNorm(r) | Op::GroupNorm(r) => {
                f(r.x);
                f(r.gain);
                f(r.bias);
            }
            Op::Concat(parts) => parts.iter().copied().for_each(f),
            Op::CrossEntropy(r) => f(r.logits),
        }
    }
}

pub(crate) struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Read-only view of recorded values, handed to backward rules.
pub(crate) struct Values<'n, 'a, T>(&'n [Node<'a, T>]);

impl<T> Values<'_, '_, T> {
    pub(crate) fn get(&self, v: Var) -> &Tensor<T> {
        self.0[v.0].value.get()
    }
}

/// Gradient accumulators, allocated lazily for nodes that need one.
pub(crate) struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
    wanted: Vec<bool>,
    lens: Vec<usize>,
}

impl<T: Scalar> Grads<T> {
    /// Accumulator for `v`, or `None` when `v` does not lead to a trainable leaf.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.wanted[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.slots[v.0].get_or_insert_with(|| vec![T::ZERO; len]))
    }

    pub(crate) fn add(&mut self, v: Var, g: &[T]) {
        if let Some(slot) = self.slot(v) {
            for (s, x) in slot.iter_mut().zip(g) {
                *s += *x;
            }
        }
    }
}

pub struct Tape<'a, T> {
    nodes: Vec<Node<'a, T>>,
    params: BTreeMap<usize, Var>,
    recording: bool,
    check_finite: bool,
    recorded_ops: usize,
    /// Running hash of every relu's on/off pattern.
    kinks: u64,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// A tape that records ops for a later `backward`.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            recording: true,
            check_finite: cfg!(debug_assertions),
            recorded_ops: 0,
            kinks: 0,
        }
    }

    /// A tape that only evaluates; nothing is kept for differentiation.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    /// Toggles the eager NaN/Inf scan after every op (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Fingerprint of which relu inputs were positive so far. Two evaluations
    /// with equal fingerprints ran through the same linear pieces.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    pub(crate) fn note_kinks<I: Iterator<Item = bool>>(&mut self, active: I) {
        let mut h = self.kinks.rotate_left(17) ^ 0xA5A5;
        let (mut word, mut bits) = (0u64, 0);
        for on in active {
            word = (word << 1) | on as u64;
            bits += 1;
            if bits == 64 {
                h = (h ^ word).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(23);
                (word, bits) = (0, 0);
            }
        }
        self.kinks = (h ^ word ^ ((bits as u64) << 56)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of ops still awaiting a backward pass.
    pub fn pending_ops(&self) -> usize {
        self.recorded_ops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Value::Owned(t), false)
    }

    /// Records an owned tensor; it receives a gradient if it requires one.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad() && self.recording;
        self.push_leaf(Value::Owned(t), rg)
    }

    /// Records a borrowed parameter. Repeated calls return the same handle.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        let key = t as *const Tensor<T> as usize;
        if let Some(v) = self.params.get(&key) {
            return *v;
        }
        let rg = t.requires_grad() && self.recording;
        let v = self.push_leaf(Value::Borrowed(t), rg);
        self.params.insert(key, v);
        v
    }

    fn push_leaf(&mut self, value: Value<'a, T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut rg = false;
        if self.recording {
            op.for_each_input(|v| rg |= self.nodes[v.0].requires_grad);
        }
        let op = if rg {
            self.recorded_ops += 1;
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad: rg,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a leaf after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient accumulated for a parameter registered through [`Tape::param`].
    pub fn param_grad(&self, t: &Tensor<T>) -> Option<&[T]> {
        let key = t as *const Tensor<T> as usize;
        self.params.get(&key).and_then(|v| self.grad(*v))
    }

    /// Consumes the recorded ops and leaves gradients on every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.get().numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.get().shape()
            ));
        }
        if self.recorded_ops == 0 || !loss_node.requires_grad {
            return Err(contract_err!(
                "backward called on a tape with no recorded ops leading to the loss"
            ));
        }

        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
            wanted: self.nodes.iter().map(|n| n.requires_grad).collect(),
            lens: self.nodes.iter().map(|n| n.value.get().numel()).collect(),
        };
        grads.slots[loss.0] = Some(vec![T::ONE]);

        for i in (0..=loss.0).rev() {
            let op = mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            if matches!(op, Op::Leaf) {
                self.nodes[i].grad = Some(g);
                continue;
            }
            let values = Values(&self.nodes);
            let out = self.nodes[i].value.get();
            backward_op(&op, out, &g, &values, &mut grads);
        }
        for node in &mut self.nodes {
            node.op = Op::Leaf;
            if node.requires_grad && node.grad.is_none() && node_is_leaf_input(node) {
                node.grad = Some(vec![T::ZERO; node.value.get().numel()]);
            }
        }
        self.recorded_ops = 0;
        Ok(())
    }
}

fn node_is_leaf_input<T: Scalar>(node: &Node<'_, T>) -> bool {
    // After backward every op is a leaf; owned intermediate values never carry
    // `requires_grad` from a tensor flag, so only borrowed params and owned
    // leaves flagged by the caller reach here with a missing gradient.
    match &node.value {
        Value::Borrowed(_) => true,
        Value::Owned(t) => t.requires_grad(),
    }
}

fn backward_op<T: Scalar>(op: &Op<T>, out: &Tensor<T>, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            grads.add(*a, g);
            grads.add(*b, g);
        }
        Op::Sub(a, b) => {
            grads.add(*a, g);
            if let Some(s) = grads.slot(*b) {
                for (s, x) in s.iter_mut().zip(g) {
                    *s -= *x;
                }
            }
        }
        Op::Mul(a, b) => elementwise::mul_backward(*a, *b, g, vals, grads),
        Op::Div(a, b) => elementwise::div_backward(*a, *b, g, vals, grads),
        Op::Scale(x, c) => {
            if let Some(s) = grads.slot(*x) {
                for (s, v) in s.iter_mut().zip(g) {
                    *s += *v * *c;
                }
            }
        }
        Op::AddScalar(x) => grads.add(*x, g),
        Op::AddBias { x, bias } => elementwise::add_bias_backward(*x, *bias, g, vals, grads),
        Op::Relu(x) => elementwise::relu_backward(*x, g, vals, grads),
        Op::Gelu(x) => elementwise::gelu_backward(*x, g, vals, grads),
        Op::Matmul(r) => linalg::matmul_backward(r, g, vals, grads),
        Op::Conv2d(r) => conv::conv2d_backward(r, g, vals, grads),
        Op::Upsample { x, geom } => resize::upsample_backward(*x, geom, g, grads),
        Op::LayerNorm(r) => norm::layer_norm_backward(r, g, vals, grads),
        Op::GroupNorm(r) => norm::group_norm_backward(r, g, vals, grads),
        Op::Softmax { x, outer, len, inner } => {
            reduce::softmax_backward(*x, out.data(), *outer, *len, *inner, g, grads)
        }
        Op::Reshape(x) => grads.add(*x, g),
        Op::Permute { x, perm } => shape::permute_backward(*x, perm, out.shape(), g, grads),
        Op::Concat(parts) => shape::concat_backward(parts, g, vals, grads),
        Op::Sum(x) => {
            if let Some(s) = grads.slot(*x) {
                s.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Op::Mean(x) => {
            let n = T::from_usize(vals.get(*x).numel());
            if let Some(s) = grads.slot(*x) {
                let gv = g[0] / n;
                s.iter_mut().for_each(|v| *v += gv);
            }
        }
        Op::SumLastAxis(x) => reduce::sum_last_axis_backward(*x, g, vals, grads),
        Op::CrossEntropy(r) => reduce::cross_entropy_backward(r, g, grads),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 2.5).requiring_grad();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let loss = tape.sum(xv).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xv).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let x = Tensor::<f64>::from_fn(&[5], |i| i as f64 * 0.7 - 1.0).requiring_grad();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        let expected: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(xv).unwrap(), &expected[..]);
    }

    #[test]
    fn backward_clears_the_record() {
        let x = Tensor::<f32>::full(&[3], 2.0).requiring_grad();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let loss = tape.sum(xv).unwrap();
        assert_eq!(tape.pending_ops(), 1);
        tape.backward(loss).unwrap();
        assert_eq!(tape.pending_ops(), 0);
        assert!(matches!(tape.backward(loss), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::<f32>::full(&[3], 2.0).requiring_grad();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let y = tape.relu(xv).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_param_registration_shares_a_node() {
        let x = Tensor::<f64>::full(&[2], 1.5).requiring_grad();
        let mut tape = Tape::new();
        let a = tape.param(&x);
        let b = tape.param(&x);
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grad(&x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn unreached_trainable_leaf_gets_zero_grad() {
        let x = Tensor::<f64>::full(&[2], 1.0).requiring_grad();
        let unused = Tensor::<f64>::full(&[3], 1.0).requiring_grad();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let uv = tape.param(&unused);
        let loss = tape.sum(xv).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(uv).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let x = Tensor::<f32>::full(&[2], 1.0).requiring_grad();
        let mut tape = Tape::inference();
        let xv = tape.param(&x);
        let y = tape.relu(xv).unwrap();
        assert!(!tape.requires_grad(y));
        assert_eq!(tape.pending_ops(), 0);
    }

    #[test]
    fn non_finite_results_fail_fast() {
        let x = Tensor::<f32>::new(&[2], vec![1.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        tape.set_check_finite(true);
        let a = tape.constant(x.clone());
        let b = tape.constant(x);
        let err = tape.div(a, b).unwrap_err();
        assert_eq!(err, Error::NonFinite { op: "div" });
    }
}
