//! Bilinear resampling, half-pixel centers (align-corners = false), borders clamped.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Op, Tape, Var};
use crate::tensor::Tensor;

/// Source taps `(i0, i1, frac)` for output index `i` when resizing `src_len → dst_len`.
pub fn bilinear_sample_coord(i: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (libm::floor(pos) as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResizeGeometry {
    pub channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_height: usize,
    pub out_width: usize,
    rows: Vec<(usize, usize, f64)>,
    cols: Vec<(usize, usize, f64)>,
}

impl ResizeGeometry {
    pub fn new(input: &[usize], out_height: usize, out_width: usize) -> Result<Self> {
        let &[channels, in_height, in_width] = input else {
            return Err(dim_err!("bilinear upsample expects [C,H,W], got {:?}", input));
        };
        if channels == 0 || in_height == 0 || in_width == 0 {
            return Err(dim_err!("bilinear upsample of zero-sized input {:?}", input));
        }
        if out_height < in_height || out_width < in_width {
            return Err(dim_err!(
                "bilinear upsample target {out_height}x{out_width} smaller than source {in_height}x{in_width}"
            ));
        }
        Ok(Self {
            channels,
            in_height,
            in_width,
            out_height,
            out_width,
            rows: (0..out_height)
                .map(|i| bilinear_sample_coord(i, in_height, out_height))
                .collect(),
            cols: (0..out_width)
                .map(|i| bilinear_sample_coord(i, in_width, out_width))
                .collect(),
        })
    }
}

/// Bilinear resampling of a `[C,H,W]` buffer, without gradient tracking.
/// Also permits shrinking; used for data preparation.
pub fn resample_bilinear<T: Scalar>(
    data: &[T],
    channels: usize,
    (in_h, in_w): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<T> {
    let rows: Vec<_> = (0..out_h).map(|i| bilinear_sample_coord(i, in_h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|i| bilinear_sample_coord(i, in_w, out_w)).collect();
    let mut out = vec![T::ZERO; channels * out_h * out_w];
    for c in 0..channels {
        let src = &data[c * in_h * in_w..(c + 1) * in_h * in_w];
        for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                let fx = T::from_f64(fx);
                let (a, b) = (src[y0 * in_w + x0], src[y0 * in_w + x1]);
                let (c0, d) = (src[y1 * in_w + x0], src[y1 * in_w + x1]);
                let top = a + fx * (b - a);
                let bot = c0 + fx * (d - c0);
                out[(c * out_h + y) * out_w + x] = top + fy * (bot - top);
            }
        }
    }
    out
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn upsample_bilinear(&mut self, x: Var, out_height: usize, out_width: usize) -> Result<Var> {
        let tx = self.value(x);
        let geom = ResizeGeometry::new(tx.shape(), out_height, out_width)?;
        let data = resample_bilinear(
            tx.data(),
            geom.channels,
            (geom.in_height, geom.in_width),
            (out_height, out_width),
        );
        let out = Tensor::new(&[geom.channels, out_height, out_width], data)?;
        self.push(out, Op::Upsample { x, geom }, "upsample_bilinear")
    }

    /// Doubles both spatial extents.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let (h, w) = match *s {
            [_, h, w] => (h, w),
            _ => return Err(dim_err!("upsample2x expects [C,H,W], got {:?}", s)),
        };
        self.upsample_bilinear(x, 2 * h, 2 * w)
    }
}

pub(crate) fn upsample_backward<T: Scalar>(x: Var, geom: &ResizeGeometry, g: &[T], grads: &mut Grads<T>) {
    let Some(gx) = grads.slot(x) else { return };
    let (ih, iw, oh, ow) = (geom.in_height, geom.in_width, geom.out_height, geom.out_width);
    for c in 0..geom.channels {
        let dst = &mut gx[c * ih * iw..(c + 1) * ih * iw];
        let src = &g[c * oh * ow..(c + 1) * oh * ow];
        for (y, &(y0, y1, fy)) in geom.rows.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (xx, &(x0, x1, fx)) in geom.cols.iter().enumerate() {
                let fx = T::from_f64(fx);
                let v = src[y * ow + xx];
                let top = v * (T::ONE - fy);
                let bot = v * fy;
                dst[y0 * iw + x0] += top * (T::ONE - fx);
                dst[y0 * iw + x1] += top * fx;
                dst[y1 * iw + x0] += bot * (T::ONE - fx);
                dst[y1 * iw + x1] += bot * fx;
            }
        }
    }
}
