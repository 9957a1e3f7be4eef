//! Finite-difference checks for every differentiable operation.
//!
//! Vector-valued ops are reduced to a scalar through a fixed random
//! weighting `sum(op(x) * r)` so every output coordinate contributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sslse_autodiff::{grad_check_many, Conv2dSpec, Result, Tape, Tensor, Var, DEFAULT_EPS};

const TOL: f64 = 1e-4;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// sum(y * r) with a constant random `r` shaped like `y`.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = randn(&mut rng, tape.value(y).shape());
    let r = tape.constant(r);
    let prod = tape.mul(y, r)?;
    Ok(tape.sum(prod))
}

fn assert_passes(name: &str, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) {
    let report = grad_check_many(f, inputs, DEFAULT_EPS).unwrap();
    assert!(
        report.max_rel_error < TOL,
        "{name}: max relative error {:.3e} at input {} index {} (analytic {}, numeric {})",
        report.max_rel_error,
        report.worst_input,
        report.worst_index,
        report.analytic,
        report.numeric
    );
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (x_shape, w_shape, spec) in [
        ([2, 3, 8, 8], [4, 3, 3, 3], Conv2dSpec::new(1, 1)),
        ([1, 2, 6, 6], [3, 2, 2, 2], Conv2dSpec::new(2, 0)),
        ([3, 1, 5, 5], [2, 1, 3, 3], Conv2dSpec::new(2, 1)),
        ([2, 4, 3, 3], [5, 4, 1, 1], Conv2dSpec::new(1, 0)),
    ] {
        let inputs = [randn(&mut rng, &x_shape), randn(&mut rng, &w_shape), randn(&mut rng, &[w_shape[0]])];
        assert_passes(
            "conv2d",
            |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], spec)?;
                weighted_sum(t, y, 1)
            },
            &inputs,
        );
    }
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (n, d, k) in [(1, 3, 2), (4, 5, 3), (7, 2, 6)] {
        let inputs = [randn(&mut rng, &[n, d]), randn(&mut rng, &[d, k]), randn(&mut rng, &[k])];
        assert_passes(
            "dense",
            |t, v| {
                let y = t.dense(v[0], v[1], v[2])?;
                weighted_sum(t, y, 2)
            },
            &inputs,
        );
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for shape in [vec![5], vec![3, 4], vec![2, 3, 2, 2]] {
        let a = randn(&mut rng, &shape);
        let b = randn(&mut rng, &shape);
        assert_passes(
            "relu",
            |t, v| {
                let y = t.relu(v[0]);
                weighted_sum(t, y, 3)
            },
            std::slice::from_ref(&a),
        );
        assert_passes(
            "sigmoid",
            |t, v| {
                let y = t.sigmoid(v[0]);
                weighted_sum(t, y, 4)
            },
            std::slice::from_ref(&a),
        );
        assert_passes(
            "add",
            |t, v| {
                let y = t.add(v[0], v[1])?;
                weighted_sum(t, y, 5)
            },
            &[a.clone(), b.clone()],
        );
        assert_passes(
            "mul",
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted_sum(t, y, 6)
            },
            &[a.clone(), b.clone()],
        );
        assert_passes(
            "scale+mean",
            |t, v| {
                let y = t.scale(v[0], -1.7);
                let y = t.mul(y, v[0])?;
                Ok(t.mean(y))
            },
            std::slice::from_ref(&a),
        );
    }
}

#[test]
fn pooling_and_channel_scaling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for shape in [[1, 2, 3, 3], [2, 3, 4, 2], [3, 1, 5, 5]] {
        let x = randn(&mut rng, &shape);
        let g = randn(&mut rng, &shape[..2]);
        assert_passes(
            "global_avg_pool",
            |t, v| {
                let y = t.global_avg_pool(v[0])?;
                weighted_sum(t, y, 7)
            },
            std::slice::from_ref(&x),
        );
        assert_passes(
            "scale_channels",
            |t, v| {
                let y = t.scale_channels(v[0], v[1])?;
                weighted_sum(t, y, 8)
            },
            &[x.clone(), g],
        );
    }
}

#[test]
fn normalize_and_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for (n, k) in [(1, 2), (3, 4), (6, 5)] {
        let x = randn(&mut rng, &[n, k]);
        assert_passes(
            "l2_normalize",
            |t, v| {
                let y = t.l2_normalize(v[0])?;
                weighted_sum(t, y, 9)
            },
            std::slice::from_ref(&x),
        );
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + 1) % k).collect();
        assert_passes(
            "softmax_cross_entropy",
            |t, v| t.softmax_cross_entropy(v[0], &labels),
            std::slice::from_ref(&x),
        );
    }
}

#[test]
fn shared_subexpressions_accumulate() {
    // Diamond: a = relu(x), b = sigmoid(x); loss = sum(a*b + a).
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for shape in [[4], [6], [9]] {
        let x = randn(&mut rng, &shape);
        assert_passes(
            "diamond",
            |t, v| {
                let a = t.relu(v[0]);
                let b = t.sigmoid(v[0]);
                let ab = t.mul(a, b)?;
                let y = t.add(ab, a)?;
                weighted_sum(t, y, 10)
            },
            std::slice::from_ref(&x),
        );
    }
}

#[test]
fn conv_relu_dense_cross_entropy_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inputs = [
        randn(&mut rng, &[3, 2, 6, 6]),
        randn(&mut rng, &[4, 2, 3, 3]),
        randn(&mut rng, &[4]),
        randn(&mut rng, &[4, 3]),
        randn(&mut rng, &[3]),
    ];
    assert_passes(
        "conv-relu-pool-dense-xent",
        |t, v| {
            let h = t.conv2d(v[0], v[1], v[2], Conv2dSpec::new(1, 1))?;
            let h = t.relu(h);
            let h = t.global_avg_pool(h)?;
            let logits = t.dense(h, v[3], v[4])?;
            t.softmax_cross_entropy(logits, &[0, 2, 1])
        },
        &inputs,
    );
}
