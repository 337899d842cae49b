//! Composite segmentation loss: cross-entropy plus soft Dice.

use alloc::vec;

use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Smoothing added to both soft-Dice numerator and denominator.
pub const DICE_SMOOTH: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub ce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ce: 0.5, dice: 0.5 }
    }
}

/// Channel-first one-hot encoding `[K, labels.len()]`.
pub fn one_hot<T: Scalar>(labels: &[u8], classes: usize) -> Result<Tensor<T>> {
    let n = labels.len();
    let mut data = vec![T::ZERO; classes * n];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(contract_err!("label {l} at pixel {i} is outside [0, {classes})"));
        }
        data[l * n + i] = T::ONE;
    }
    Tensor::new(&[classes, n], data)
}

/// `1 − mean_k (2Σp·y + s) / (Σp + Σy + s)` with `p = softmax(logits)` over classes.
pub fn soft_dice_loss<T: Scalar>(tape: &mut Tape<'_, T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let k = *shape.first().ok_or_else(|| contract_err!("logits must be class-first"))?;
    let pixels = shape[1..].iter().product::<usize>();
    if pixels != labels.len() {
        return Err(contract_err!("{} labels for {pixels} pixels", labels.len()));
    }
    let target = one_hot::<T>(labels, k)?;
    let counts: Tensor<T> = Tensor::from_fn(&[k], |c| target.data()[c * pixels..(c + 1) * pixels].iter().fold(T::ZERO, |a, &b| a + b));
    let y = tape.constant(target);
    let probs = tape.softmax(logits, 0)?;
    let probs = tape.reshape(probs, &[k, pixels])?;
    let overlap = tape.mul(probs, y)?;
    let overlap = tape.sum_last_axis(overlap)?;
    let numer = tape.scale(overlap, T::from_f64(2.0))?;
    let numer = tape.add_scalar(numer, T::from_f64(DICE_SMOOTH))?;
    let mass = tape.sum_last_axis(probs)?;
    let counts = tape.constant(counts);
    let denom = tape.add(mass, counts)?;
    let denom = tape.add_scalar(denom, T::from_f64(DICE_SMOOTH))?;
    let dice = tape.div(numer, denom)?;
    let mean = tape.mean(dice)?;
    let neg = tape.scale(mean, -T::ONE)?;
    tape.add_scalar(neg, T::ONE)
}

/// `λ_ce·CE + λ_dice·(1 − soft Dice)` for one `[K, H, W]` logit map.
pub fn segmentation_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    logits: Var,
    labels: &[u8],
    weights: LossWeights,
) -> Result<Var> {
    let ce = tape.cross_entropy(logits, labels)?;
    let ce = tape.scale(ce, T::from_f64(weights.ce))?;
    let dice = soft_dice_loss(tape, logits, labels)?;
    let dice = tape.scale(dice, T::from_f64(weights.dice))?;
    tape.add(ce, dice)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(logits: Tensor<f64>, labels: &[u8], w: LossWeights) -> f64 {
        let mut tape = Tape::inference();
        let x = tape.constant(logits);
        let l = segmentation_loss(&mut tape, x, labels, w).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let labels = [0u8, 1, 1, 0, 2, 2, 1, 0, 2];
        let logits = Tensor::from_fn(&[3, 3, 3], |i| if labels[i % 9] as usize == i / 9 { 40.0 } else { -40.0 });
        assert!(eval(logits, &labels, LossWeights::default()) < 1e-3);
    }

    #[test]
    fn uniform_two_class_cross_entropy_is_ln_two() {
        let labels = [0u8, 1, 1, 0];
        let w = LossWeights { ce: 1.0, dice: 0.0 };
        assert_eq!(eval(Tensor::zeros(&[2, 2, 2]), &labels, w), core::f64::consts::LN_2);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::zeros(&[2, 1, 2]));
        assert!(soft_dice_loss(&mut tape, x, &[0, 2]).is_err());
    }
}
