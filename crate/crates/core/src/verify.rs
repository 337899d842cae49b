//! Central finite-difference gradient verification (64-bit mode).
//!
//! The numeric side only ever runs forward passes on inference tapes, so it
//! shares no code path with the backward rules it checks.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::Parameters;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const STEP: f64 = 1e-5;
/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries left unchecked because every tried step moved some relu input
    /// across zero, where the function has no derivative.
    pub kink_skips: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

/// Which entries of each input to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// At most this many entries per input, drawn with a fixed seed.
    Sample { per_input: usize, seed: u64 },
}

fn entries(coverage: Coverage, input: usize, n: usize) -> Vec<usize> {
    match coverage {
        Coverage::All => (0..n).collect(),
        Coverage::Sample { per_input, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (input as u64).wrapping_mul(0x9E37_79B9));
            let mut v = sample(&mut rng, n, per_input.min(n)).into_vec();
            v.sort_unstable();
            v
        }
    }
}

/// Central differences over the selected entries. `nudge(input, index, delta)`
/// shifts one entry by `delta` and returns the resulting loss with the
/// evaluation's kink signature. A difference only counts when both sides ran
/// through the same relu pattern as the unperturbed point; otherwise the step
/// is refined, and after three tries the entry is skipped.
fn sweep<N>(analytic: &[Vec<f64>], coverage: Coverage, step: f64, mut nudge: N) -> Result<GradCheckReport>
where
    N: FnMut(usize, usize, f64) -> Result<(f64, u64)>,
{
    let mut report = GradCheckReport { checked: 0, kink_skips: 0, max_rel_error: 0.0, worst: None };
    let Some(first) = analytic.iter().position(|g| !g.is_empty()) else {
        return Ok(report);
    };
    let (_, base) = nudge(first, 0, 0.0)?;
    for (input, grads) in analytic.iter().enumerate() {
        'entry: for index in entries(coverage, input, grads.len()) {
            let mut h = step;
            for _ in 0..3 {
                let (plus, sp) = nudge(input, index, h)?;
                let (minus, sm) = nudge(input, index, -h)?;
                if sp != base || sm != base {
                    h /= 10.0;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * h);
                let a = grads[index];
                let err = relative_error(a, numeric);
                report.checked += 1;
                if report.worst.is_none() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some(Mismatch { input, index, analytic: a, numeric });
                }
                continue 'entry;
            }
            report.kink_skips += 1;
        }
    }
    Ok(report)
}

/// Compares backward-pass gradients of the scalar `f(inputs)` with central
/// differences for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, coverage: Coverage) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    let owned: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().requiring_grad()).collect();
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = owned.iter().map(|t| tape.param(t)).collect();
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(&owned)
            .map(|(v, t)| tape.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect()
    };
    let mut work = owned;
    sweep(&analytic, coverage, STEP, |input, index, delta| {
        let orig = work[input].data()[index];
        work[input].data_mut()[index] = orig + delta;
        let mut tape = Tape::inference();
        let vars: Vec<Var> = work.iter().map(|t| tape.param(t)).collect();
        let out = f(&mut tape, &vars).map(|v| (tape.value(v).data()[0], tape.kink_signature()));
        work[input].data_mut()[index] = orig;
        out
    })
}

/// Same check over every trainable tensor of a module, perturbing the
/// module's own parameters in place.
pub fn check_parameter_gradients<P, F>(module: &P, f: F, coverage: Coverage) -> Result<GradCheckReport>
where
    P: Parameters<f64> + Clone,
    F: for<'t> Fn(&'t P, &mut Tape<'t, f64>) -> Result<Var>,
{
    check_parameter_gradients_with_step(module, f, coverage, STEP)
}

/// [`check_parameter_gradients`] with an explicit central-difference step.
/// Large relu networks need a smaller step so `±step` rarely carries a
/// pre-activation across zero.
pub fn check_parameter_gradients_with_step<P, F>(module: &P, f: F, coverage: Coverage, step: f64) -> Result<GradCheckReport>
where
    P: Parameters<f64> + Clone,
    F: for<'t> Fn(&'t P, &mut Tape<'t, f64>) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let loss = f(module, &mut tape)?;
        tape.backward(loss)?;
        module
            .named_parameters()
            .into_iter()
            .map(|(_, p)| tape.param_grad(p).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
            .collect()
    };
    let mut work = module.clone();
    sweep(&analytic, coverage, step, |input, index, delta| {
        let set = |m: &mut P, v: Option<f64>| -> f64 {
            let mut params = m.named_parameters_mut();
            let slot = &mut params[input].1.data_mut()[index];
            let orig = *slot;
            *slot = v.unwrap_or(orig);
            orig
        };
        let orig = set(&mut work, None);
        set(&mut work, Some(orig + delta));
        let mut tape = Tape::inference();
        let out = f(&work, &mut tape).map(|v| (tape.value(v).data()[0], tape.kink_signature()));
        set(&mut work, Some(orig));
        out
    })
}
