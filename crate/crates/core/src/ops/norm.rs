//! Layer and group normalization (biased variance, per-element affine).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Op, Tape, Values, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Affine {
    /// Parameter index = element index mod `d`.
    LastAxis { d: usize },
    /// Parameter index = channel of a `[C, spatial]` layout.
    Channel { spatial: usize, channels: usize },
}

impl Affine {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Affine::LastAxis { d } => i % d,
            Affine::Channel { spatial, channels } => (i / spatial) % channels,
        }
    }
}

pub(crate) struct NormRecord<T> {
    pub x: Var,
    pub gain: Var,
    pub bias: Var,
    segment: usize,
    affine: Affine,
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn normalize<T: Scalar>(x: &[T], segment: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = T::from_usize(segment);
    let mut xhat = vec![T::ZERO; x.len()];
    let mut rstd = Vec::with_capacity(x.len() / segment);
    for (src, dst) in x.chunks(segment).zip(xhat.chunks_mut(segment)) {
        let mean = src.iter().copied().sum::<T>() / n;
        let var = src.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
        let r = T::ONE / (var + eps).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (*s - mean) * r;
        }
        rstd.push(r);
    }
    (xhat, rstd)
}

impl<'a, T: Scalar> Tape<'a, T> {
    fn norm_common(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        segment: usize,
        affine: Affine,
        eps: T,
        name: &'static str,
    ) -> Result<Var> {
        let tx = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let (xhat, rstd) = normalize(tx.data(), segment, eps);
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let a = affine.index(i);
                *v * g[a] + b[a]
            })
            .collect();
        let out = Tensor::new(tx.shape(), data)?;
        let rec = NormRecord { x, gain, bias, segment, affine, xhat, rstd };
        let op = if name == "layer_norm" { Op::LayerNorm(rec) } else { Op::GroupNorm(rec) };
        self.push(out, op, name)
    }

    /// Normalizes over the last axis, then applies `gain`/`bias` of length D.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x);
        let d = shape.last().copied().unwrap_or(0);
        if d == 0 {
            return Err(dim_err!("layer_norm over an empty last axis in {:?}", shape));
        }
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(dim_err!(
                    "layer_norm affine {:?} does not match D={d}",
                    self.shape(p)
                ));
            }
        }
        self.norm_common(x, gain, bias, d, Affine::LastAxis { d }, eps, "layer_norm")
    }

    /// Group normalization of a `[C,H,W]` map with per-channel affine.
    pub fn group_norm(&mut self, x: Var, groups: usize, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let &[c, h, w] = &shape[..] else {
            return Err(dim_err!("group_norm expects [C,H,W], got {:?}", shape));
        };
        if groups == 0 || c % groups != 0 || h * w == 0 {
            return Err(dim_err!("group_norm: {c} channels not divisible into {groups} groups"));
        }
        for p in [gain, bias] {
            if self.shape(p) != [c] {
                return Err(dim_err!(
                    "group_norm affine {:?} does not match C={c}",
                    self.shape(p)
                ));
            }
        }
        let affine = Affine::Channel { spatial: h * w, channels: c };
        self.norm_common(x, gain, bias, (c / groups) * h * w, affine, eps, "group_norm")
    }
}

fn norm_backward<T: Scalar>(r: &NormRecord<T>, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let gain = vals.get(r.gain).data();
    if let Some(gg) = grads.slot(r.gain) {
        for (i, (gv, xh)) in g.iter().zip(&r.xhat).enumerate() {
            gg[r.affine.index(i)] += *gv * *xh;
        }
    }
    if let Some(gb) = grads.slot(r.bias) {
        for (i, gv) in g.iter().enumerate() {
            gb[r.affine.index(i)] += *gv;
        }
    }
    if let Some(gx) = grads.slot(r.x) {
        let n = T::from_usize(r.segment);
        let mut gy = vec![T::ZERO; r.segment];
        for (s, rstd) in r.rstd.iter().enumerate() {
            let base = s * r.segment;
            let xh = &r.xhat[base..base + r.segment];
            let mut sum_g = T::ZERO;
            let mut sum_gx = T::ZERO;
            for j in 0..r.segment {
                let v = g[base + j] * gain[r.affine.index(base + j)];
                gy[j] = v;
                sum_g += v;
                sum_gx += v * xh[j];
            }
            let (mg, mgx) = (sum_g / n, sum_gx / n);
            for j in 0..r.segment {
                gx[base + j] += *rstd * (gy[j] - mg - xh[j] * mgx);
            }
        }
    }
}

pub(crate) fn layer_norm_backward<T: Scalar>(r: &NormRecord<T>, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    norm_backward(r, g, vals, grads)
}

pub(crate) fn group_norm_backward<T: Scalar>(r: &NormRecord<T>, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    norm_backward(r, g, vals, grads)
}
