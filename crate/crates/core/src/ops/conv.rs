//! 2D cross-correlation via im2col + GEMM.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Op, Tape, Values, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (&[c_in, height, width], &[c_out, wc, kh, kw]) = (input, weight) else {
            return Err(dim_err!(
                "conv2d expects input [C,H,W] and weight [Co,Ci,k,k], got {:?} and {:?}",
                input,
                weight
            ));
        };
        if wc != c_in || kh != kw || kh == 0 {
            return Err(dim_err!(
                "conv2d weight {:?} incompatible with input {:?}",
                weight,
                input
            ));
        }
        if stride == 0 {
            return Err(dim_err!("conv2d stride must be positive"));
        }
        if kh > height + 2 * padding || kh > width + 2 * padding {
            return Err(dim_err!(
                "conv2d kernel {kh}x{kh} larger than padded input {}x{}",
                height + 2 * padding,
                width + 2 * padding
            ));
        }
        Ok(Self {
            c_in,
            height,
            width,
            c_out,
            kernel: kh,
            stride,
            padding,
            out_height: (height + 2 * padding - kh) / stride + 1,
            out_width: (width + 2 * padding - kh) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }

    /// 1×1 stride-1 unpadded kernels read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Input offset read by column row `r` at output position `(oy, ox)`.
    #[inline]
    fn source(&self, r: usize, oy: usize, ox: usize) -> Option<usize> {
        let k = self.kernel;
        let (c, ky, kx) = (r / (k * k), (r / k) % k, r % k);
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.height && ix < self.width).then(|| (c * self.height + iy) * self.width + ix)
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let l = self.out_len();
        let mut cols = vec![T::ZERO; self.patch_len() * l];
        for r in 0..self.patch_len() {
            let row = &mut cols[r * l..(r + 1) * l];
            for oy in 0..self.out_height {
                for ox in 0..self.out_width {
                    if let Some(s) = self.source(r, oy, ox) {
                        row[oy * self.out_width + ox] = x[s];
                    }
                }
            }
        }
        cols
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let l = self.out_len();
        for r in 0..self.patch_len() {
            let row = &cols[r * l..(r + 1) * l];
            for oy in 0..self.out_height {
                for ox in 0..self.out_width {
                    if let Some(s) = self.source(r, oy, ox) {
                        dx[s] += row[oy * self.out_width + ox];
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvRecord<T> {
    pub x: Var,
    pub w: Var,
    pub bias: Option<Var>,
    geom: ConvGeometry,
    cols: Vec<T>,
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// Cross-correlation of `x: [C_in,H,W]` with `w: [C_out,C_in,k,k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let geom = ConvGeometry::new(tx.shape(), tw.shape(), stride, padding)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.c_out] {
                return Err(dim_err!(
                    "conv2d bias {:?} does not match {} output channels",
                    self.value(b).shape(),
                    geom.c_out
                ));
            }
        }
        let cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            geom.im2col(tx.data())
        };
        let colref = if geom.is_pointwise() { tx.data() } else { &cols[..] };
        let l = geom.out_len();
        let mut out = vec![T::ZERO; geom.c_out * l];
        T::gemm(geom.c_out, geom.patch_len(), l, tw.data(), false, colref, false, &mut out, false);
        if let Some(b) = bias {
            for (row, bv) in out.chunks_mut(l).zip(self.value(b).data()) {
                row.iter_mut().for_each(|v| *v += *bv);
            }
        }
        let out = Tensor::new(&[geom.c_out, geom.out_height, geom.out_width], out)?;
        let rec = ConvRecord { x, w, bias, geom, cols };
        self.push(out, Op::Conv2d(rec), "conv2d")
    }
}

pub(crate) fn conv2d_backward<T: Scalar>(r: &ConvRecord<T>, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let geom = &r.geom;
    let (co, pl, l) = (geom.c_out, geom.patch_len(), geom.out_len());
    if let Some(b) = r.bias {
        if let Some(gb) = grads.slot(b) {
            for (s, row) in gb.iter_mut().zip(g.chunks(l)) {
                *s += row.iter().copied().sum::<T>();
            }
        }
    }
    if let Some(gw) = grads.slot(r.w) {
        let cols = if geom.is_pointwise() { vals.get(r.x).data() } else { &r.cols[..] };
        // dW[co, pl] += dY[co, l] · colsᵀ
        T::gemm(co, l, pl, g, false, cols, true, gw, true);
    }
    let w = vals.get(r.w).data();
    if let Some(gx) = grads.slot(r.x) {
        if geom.is_pointwise() {
            T::gemm(pl, co, l, w, true, g, false, gx, true);
        } else {
            let mut dcols = vec![T::ZERO; pl * l];
            T::gemm(pl, co, l, w, true, g, false, &mut dcols, false);
            geom.col2im_add(&dcols, gx);
        }
    }
}
