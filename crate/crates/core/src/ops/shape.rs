use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Op, Tape, Values, Var};
use crate::tensor::{numel, Tensor};

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// `out[idx] = src[idx permuted back]`, where `out.shape[i] = src.shape[perm[i]]`.
fn permute_into<T: Copy>(src: &[T], src_shape: &[usize], perm: &[usize], out: &mut [T], accumulate: bool)
where
    T: core::ops::AddAssign,
{
    let src_strides = row_major_strides(src_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for o in out.iter_mut() {
        if accumulate {
            *o += src[offset];
        } else {
            *o = src[offset];
        }
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if numel(shape) != t.numel() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", t.shape(), shape));
        }
        let out = Tensor::new(shape, t.data().to_vec())?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rank = t.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || core::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("invalid permutation {:?} for shape {:?}", perm, t.shape()));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
        let mut out = vec![T::ZERO; t.numel()];
        permute_into(t.data(), t.shape(), perm, &mut out, false);
        let out = Tensor::new(&out_shape, out)?;
        self.push(out, Op::Permute { x, perm: perm.to_vec() }, "permute")
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 2 {
            return Err(dim_err!("transpose expects a matrix, got {:?}", self.shape(x)));
        }
        self.permute(x, &[1, 0])
    }

    /// Concatenates along the leading (channel) axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(dim_err!("concat of zero tensors"));
        };
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.rank() == 0 || t.shape()[1..] != tail[..] {
                return Err(dim_err!(
                    "concat: shape {:?} incompatible with trailing extents {:?}",
                    t.shape(),
                    tail
                ));
            }
            channels += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(&tail);
        let out = Tensor::new(&shape, data)?;
        self.push(out, Op::Concat(parts.to_vec()), "concat_channels")
    }
}

pub(crate) fn permute_backward<T: Scalar>(x: Var, perm: &[usize], out_shape: &[usize], g: &[T], grads: &mut Grads<T>) {
    let Some(gx) = grads.slot(x) else { return };
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    permute_into(g, out_shape, &inverse, gx, true);
}

pub(crate) fn concat_backward<T: Scalar>(parts: &[Var], g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let mut offset = 0;
    for p in parts {
        let n = vals.get(*p).numel();
        grads.add(*p, &g[offset..offset + n]);
        offset += n;
    }
}
