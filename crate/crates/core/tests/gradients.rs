//! Finite-difference checks for every differentiable primitive (f64).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transunet_core::verify::{check_gradients, Coverage};
use transunet_core::{Result, Tape, Tensor, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduces an arbitrary output to a scalar through fixed random weights, so
/// every output element contributes a distinct gradient.
fn project(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.shape(y), &mut rng);
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

fn assert_grad<F>(inputs: &[Tensor<f64>], tol: f64, f: F)
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    let report = check_gradients(inputs, f, Coverage::All).unwrap();
    assert!(
        report.max_rel_error < tol,
        "max relative error {} (worst {:?})",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (m, k, n) in [(5, 4, 3), (1, 7, 2), (6, 3, 6)] {
        let inputs = [random(&[m, k], &mut rng), random(&[k, n], &mut rng)];
        assert_grad(&inputs, 1e-6, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 11)
        });
    }
}

#[test]
fn batched_and_transposed_matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (b, m, k, n) in [(2, 3, 4, 5), (3, 2, 2, 2), (1, 4, 3, 1)] {
        let inputs = [random(&[b, m, k], &mut rng), random(&[b, n, k], &mut rng)];
        assert_grad(&inputs, 1e-6, |t, v| {
            let y = t.matmul_transposed(v[0], v[1])?;
            project(t, y, 12)
        });
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = [
        ([2, 8, 8], [3, 2, 3, 3], 1, 1),
        ([3, 7, 6], [2, 3, 3, 3], 2, 1),
        ([4, 5, 5], [2, 4, 1, 1], 1, 0),
        ([2, 6, 6], [2, 2, 1, 1], 2, 0),
    ];
    for (xs, ws, stride, pad) in cases {
        let inputs = [random(&xs, &mut rng), random(&ws, &mut rng), random(&[ws[0]], &mut rng)];
        assert_grad(&inputs, 1e-5, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            project(t, y, 13)
        });
    }
}

#[test]
fn bilinear_upsample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (shape, oh, ow) in [([1, 2, 2], 4, 4), ([2, 3, 5], 6, 10), ([3, 4, 3], 9, 7)] {
        let inputs = [random(&shape, &mut rng)];
        assert_grad(&inputs, 1e-5, |t, v| {
            let y = t.upsample_bilinear(v[0], oh, ow)?;
            project(t, y, 14)
        });
    }
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for shape in [[3, 8], [1, 5], [6, 4]] {
        let d = shape[1];
        let inputs = [
            random(&shape, &mut rng),
            random(&[d], &mut rng),
            random(&[d], &mut rng),
        ];
        assert_grad(&inputs, 1e-5, |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, y, 15)
        });
    }
}

#[test]
fn group_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (shape, groups) in [([4, 3, 3], 2), ([6, 2, 4], 3), ([2, 5, 5], 1)] {
        let c = shape[0];
        let inputs = [
            random(&shape, &mut rng),
            random(&[c], &mut rng),
            random(&[c], &mut rng),
        ];
        assert_grad(&inputs, 1e-5, |t, v| {
            let y = t.group_norm(v[0], groups, v[1], v[2], 1e-5)?;
            project(t, y, 16)
        });
    }
}

#[test]
fn softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (shape, axis) in [(vec![4, 5], 1), (vec![3, 2, 4], 0), (vec![2, 3, 4], 1)] {
        let inputs = [random(&shape, &mut rng)];
        assert_grad(&inputs, 1e-5, |t, v| {
            let y = t.softmax(v[0], axis)?;
            project(t, y, 17)
        });
    }
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for shape in [vec![7], vec![3, 4], vec![2, 2, 3]] {
        // Keep relu inputs away from the kink.
        let x = Tensor::from_fn(&shape, |_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        });
        assert_grad(std::slice::from_ref(&x), 1e-4, |t, v| {
            let y = t.relu(v[0])?;
            project(t, y, 18)
        });
        assert_grad(&[x], 1e-5, |t, v| {
            let y = t.gelu(v[0])?;
            project(t, y, 19)
        });
    }
}

#[test]
fn elementwise_and_bias_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for shape in [[2, 3], [4, 1], [3, 5]] {
        let a = random(&shape, &mut rng);
        let b = Tensor::from_fn(&shape, |_| rng.random_range(0.5..2.0));
        let bias = random(&[shape[1]], &mut rng);
        assert_grad(&[a, b, bias], 1e-5, |t, v| {
            let p = t.mul(v[0], v[1])?;
            let q = t.div(p, v[1])?;
            let r = t.div(v[0], v[1])?;
            let s = t.add(q, r)?;
            let s = t.sub(s, v[1])?;
            let s = t.scale(s, 1.7)?;
            let s = t.add_scalar(s, 0.3)?;
            let s = t.add_bias(s, v[2])?;
            project(t, s, 20)
        });
    }
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (a_shape, b_shape) in [([2, 3, 4], [1, 3, 4]), ([1, 2, 2], [3, 2, 2]), ([4, 1, 5], [2, 1, 5])] {
        let inputs = [random(&a_shape, &mut rng), random(&b_shape, &mut rng)];
        assert_grad(&inputs, 1e-6, |t, v| {
            let c = t.concat_channels(&[v[0], v[1]])?;
            let p = t.permute(c, &[2, 0, 1])?;
            let n = t.value(p).numel();
            let r = t.reshape(p, &[n / a_shape[2], a_shape[2]])?;
            let tr = t.transpose(r)?;
            let s = t.sum_last_axis(tr)?;
            project(t, s, 21)
        });
    }
}

#[test]
fn reduction_and_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (k, h, w) in [(2, 4, 4), (3, 2, 5), (4, 3, 3)] {
        let labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..k) as u8).collect();
        let inputs = [random(&[k, h, w], &mut rng)];
        assert_grad(&inputs, 1e-5, |t, v| {
            let ce = t.cross_entropy(v[0], &labels)?;
            let m = t.mean(v[0])?;
            let s = t.add(ce, m)?;
            Ok(s)
        });
    }
}
