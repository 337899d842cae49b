use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Op, Tape, Values, Var};
use crate::tensor::Tensor;

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl<'a, T: Scalar> Tape<'a, T> {
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err!(
                "{name}: operand shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| *v * c).collect())?;
        self.push(out, Op::Scale(x, c), "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| *v + c).collect())?;
        self.push(out, Op::AddScalar(x), "add_scalar")
    }

    /// Adds a vector to every row of `x` (broadcast over all but the last axis).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tx.shape().last().copied().unwrap_or(1);
        if tb.numel() != d || tb.rank() != 1 {
            return Err(dim_err!(
                "add_bias: bias {:?} does not match last axis of {:?}",
                tb.shape(),
                tx.shape()
            ));
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks(d.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| *v + *bb))
            .collect();
        let out = Tensor::new(tx.shape(), data)?;
        self.push(out, Op::AddBias { x, bias }, "add_bias")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v.max(T::ZERO)).collect())?;
        self.note_kinks(out.data().iter().map(|v| *v > T::ZERO));
        self.push(out, Op::Relu(x), "relu")
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let half = T::from_f64(0.5);
        let k = T::from_f64(FRAC_1_SQRT_2);
        let data = t
            .data()
            .iter()
            .map(|v| half * *v * (T::ONE + (*v * k).erf()))
            .collect();
        let out = Tensor::new(t.shape(), data)?;
        self.push(out, Op::Gelu(x), "gelu")
    }
}

pub(crate) fn mul_backward<T: Scalar>(a: Var, b: Var, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let (va, vb) = (vals.get(a).data(), vals.get(b).data());
    if let Some(s) = grads.slot(a) {
        for i in 0..s.len() {
            s[i] += g[i] * vb[i];
        }
    }
    if let Some(s) = grads.slot(b) {
        for i in 0..s.len() {
            s[i] += g[i] * va[i];
        }
    }
}

pub(crate) fn div_backward<T: Scalar>(a: Var, b: Var, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let (va, vb) = (vals.get(a).data(), vals.get(b).data());
    if let Some(s) = grads.slot(a) {
        for i in 0..s.len() {
            s[i] += g[i] / vb[i];
        }
    }
    if let Some(s) = grads.slot(b) {
        for i in 0..s.len() {
            s[i] -= g[i] * va[i] / (vb[i] * vb[i]);
        }
    }
}

pub(crate) fn add_bias_backward<T: Scalar>(
    x: Var,
    bias: Var,
    g: &[T],
    vals: &Values<'_, '_, T>,
    grads: &mut Grads<T>,
) {
    grads.add(x, g);
    let d = vals.get(bias).numel();
    if let Some(s) = grads.slot(bias) {
        for row in g.chunks(d) {
            for (s, v) in s.iter_mut().zip(row) {
                *s += *v;
            }
        }
    }
}

pub(crate) fn relu_backward<T: Scalar>(x: Var, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let vx = vals.get(x).data();
    if let Some(s) = grads.slot(x) {
        for i in 0..s.len() {
            if vx[i] > T::ZERO {
                s[i] += g[i];
            }
        }
    }
}

pub(crate) fn gelu_backward<T: Scalar>(x: Var, g: &[T], vals: &Values<'_, '_, T>, grads: &mut Grads<T>) {
    let vx = vals.get(x).data();
    let half = T::from_f64(0.5);
    let k = T::from_f64(FRAC_1_SQRT_2);
    let pdf_k = T::from_f64(FRAC_1_SQRT_2PI);
    if let Some(s) = grads.slot(x) {
        for i in 0..s.len() {
            let v = vx[i];
            let cdf = half * (T::ONE + (v * k).erf());
            let pdf = pdf_k * (-half * v * v).exp();
            s[i] += g[i] * (cdf + v * pdf);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn gelu_reference_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[3], vec![0.0, 1.0, -1.0]).unwrap());
        let y = tape.gelu(x).unwrap();
        let d = tape.value(y).data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((d[2] + 0.158_655_253_931_457_05).abs() < 1e-12);
    }

    #[test]
    fn mismatched_shapes_are_dimension_errors() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.add(a, b), Err(crate::Error::Dimension(_))));
    }
}
