use alloc::vec;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Op, Tape, Values, Var};
use crate::tensor::Tensor;

pub(crate) struct MatmulRecord {
    pub a: Var,
    pub b: Var,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_t: bool,
}

fn split(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [r, c] => Some((1, r, c)),
        [b, r, c] => Some((b, r, c)),
        _ => None,
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// Matrix product `[m,k]·[k,n]`, or batched `[B,m,k]·[B,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `A·Bᵀ` where `b` is stored as `[n,k]` (or `[B,n,k]`).
    pub fn matmul_transposed(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mismatch = || {
            dim_err!(
                "matmul: incompatible shapes {:?} and {:?}{}",
                ta.shape(),
                tb.shape(),
                if b_t { " (rhs transposed)" } else { "" }
            )
        };
        let (ba, m, k) = split(ta.shape()).ok_or_else(mismatch)?;
        let (bb, r1, r2) = split(tb.shape()).ok_or_else(mismatch)?;
        let (kb, n) = if b_t { (r2, r1) } else { (r1, r2) };
        if ba != bb || k != kb || ta.rank() != tb.rank() {
            return Err(mismatch());
        }
        let mut out = vec![T::ZERO; ba * m * n];
        for i in 0..ba {
            T::gemm(
                m,
                k,
                n,
                &ta.data()[i * m * k..(i + 1) * m * k],
                false,
                &tb.data()[i * k * n..(i + 1) * k * n],
                b_t,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let shape = if ta.rank() == 2 { vec![m, n] } else { vec![ba, m, n] };
        let out = Tensor::new(&shape, out)?;
        let rec = MatmulRecord { a, b, batch: ba, m, k, n, b_t };
        self.push(out, Op::Matmul(rec), "matmul")
    }

    /// `x·W + b` with `W` stored `[in, out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }
}

pub(crate) fn matmul_backward<T: Scalar>(r: &MatmulRecord, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let (m, k, n) = (r.m, r.k, r.n);
    let va = vals.get(r.a).data();
    let vb = vals.get(r.b).data();
    if let Some(ga) = grads.slot(r.a) {
        for i in 0..r.batch {
            let gc = &g[i * m * n..(i + 1) * m * n];
            let bb = &vb[i * k * n..(i + 1) * k * n];
            // dA = dC · op(B)ᵀ
            T::gemm(m, n, k, gc, false, bb, !r.b_t, &mut ga[i * m * k..(i + 1) * m * k], true);
        }
    }
    if let Some(gb) = grads.slot(r.b) {
        for i in 0..r.batch {
            let gc = &g[i * m * n..(i + 1) * m * n];
            let aa = &va[i * m * k..(i + 1) * m * k];
            let dst = &mut gb[i * k * n..(i + 1) * k * n];
            if r.b_t {
                // dB[n,k] = dCᵀ · A
                T::gemm(n, m, k, gc, true, aa, false, dst, true);
            } else {
                // dB[k,n] = Aᵀ · dC
                T::gemm(k, m, n, aa, true, gc, false, dst, true);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_hand_computed_products() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(&[2, 2], vec![0.3, -1.2, 4.0, 2.5]).unwrap());
        let eye = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(a).data());

        let a = tape.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let ones = tape.constant(Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap());
        let y = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.shape(y), &[2, 1]);
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 5]));
        let msg = alloc::format!("{}", tape.matmul(a, b).unwrap_err());
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn transposed_rhs_matches_explicit_transpose() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin()));
        let b = tape.constant(Tensor::from_fn(&[2, 5, 4], |i| (i as f64 * 0.3).cos()));
        let bt = tape.permute(b, &[0, 2, 1]).unwrap();
        let y1 = tape.matmul_transposed(a, b).unwrap();
        let y2 = tape.matmul(a, bt).unwrap();
        assert_eq!(tape.value(y1), tape.value(y2));
    }
}
