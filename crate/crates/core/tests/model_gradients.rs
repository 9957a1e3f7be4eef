//! Finite-difference checks of the encoder, heads and full contrastive
//! objective in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sslse_autodiff::{grad_check_many, AutodiffError, Bound, Params, Tape, Tensor, Var, DEFAULT_EPS};
use sslse_core::model::{classify, encoder_forward, init_classifier, init_params, project, se_forward, EncoderConfig};
use sslse_core::ssl::nt_xent_loss;

const TOLERANCE: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Replaces zero biases with small random values so no activation sits
/// on a ReLU kink by construction.
fn jitter(params: &Params<f64>, rng: &mut ChaCha8Rng) -> Params<f64> {
    let mut out = Params::new();
    for (name, t) in params.iter() {
        let t = if name.ends_with(".b") { random(t.shape(), rng, -0.1, 0.1) } else { t.clone() };
        out.insert(name, t).unwrap();
    }
    out
}

/// Checks `loss(params, input)` against central differences over every
/// parameter coordinate and the input.
fn check_all(
    params: &Params<f64>,
    input: Tensor<f64>,
    loss: impl Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var, AutodiffError>,
) -> f64 {
    check(params, input, true, DEFAULT_EPS, loss)
}

/// Like [`check_all`] with the input held constant.
fn check_params(
    params: &Params<f64>,
    input: Tensor<f64>,
    loss: impl Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var, AutodiffError>,
) -> f64 {
    check(params, input, false, DEFAULT_EPS, loss)
}

fn check(
    params: &Params<f64>,
    input: Tensor<f64>,
    perturb_input: bool,
    eps: f64,
    loss: impl Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var, AutodiffError>,
) -> f64 {
    let names: Vec<&str> = params.names().collect();
    let mut inputs: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    if perturb_input {
        inputs.push(input.clone());
    }
    let report = grad_check_many(
        |tape, vars| {
            let bound = Bound::from_vars(names.iter().copied().zip(vars.iter().copied()))?;
            let x = if perturb_input { *vars.last().unwrap() } else { tape.constant(input.clone()) };
            loss(tape, &bound, x)
        },
        &inputs,
        eps,
    )
    .unwrap();
    let which = names.get(report.worst_input).copied().unwrap_or("input");
    println!(
        "max relative error {:.3e} at {which}[{}] (analytic {:.6e}, numeric {:.6e}) over {} coordinates",
        report.max_rel_error, report.worst_index, report.analytic, report.numeric, report.coordinates
    );
    report.max_rel_error
}

/// Fixed random weighting that turns a tensor output into a scalar.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.value(y).shape(), &mut rng, -1.0, 1.0);
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

#[test]
fn se_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (n, c, h, hidden) in [(1, 2, 3, 1), (2, 4, 2, 2), (3, 8, 4, 3)] {
        let mut p = Params::new();
        p.insert("se.fc1.w", random(&[c, hidden], &mut rng, -1.0, 1.0)).unwrap();
        p.insert("se.fc1.b", random(&[hidden], &mut rng, 0.1, 0.5)).unwrap();
        p.insert("se.fc2.w", random(&[hidden, c], &mut rng, -1.0, 1.0)).unwrap();
        p.insert("se.fc2.b", random(&[c], &mut rng, -0.5, 0.5)).unwrap();
        let x = random(&[n, c, h, h], &mut rng, -1.0, 1.0);
        let err = check_all(&p, x, |tape, b, x| {
            let y = se_forward(tape, b, "se", x).map_err(unwrap_model)?;
            weighted_sum(tape, y, 1)
        });
        assert!(err < TOLERANCE, "{n}x{c}x{h}x{h}: {err}");
    }
}

fn unwrap_model(e: sslse_core::model::ModelError) -> AutodiffError {
    match e {
        sslse_core::model::ModelError::Autodiff(e) => e,
        other => panic!("{other}"),
    }
}

fn configs() -> Vec<(EncoderConfig, usize, usize)> {
    vec![
        (EncoderConfig::tiny(), 8, 2),
        (EncoderConfig { se_enabled: false, ..EncoderConfig::tiny() }, 8, 2),
        (
            EncoderConfig {
                stage_channels: vec![3, 4, 4],
                embedding_dim: 4,
                blocks_per_stage: 2,
                ..EncoderConfig::tiny()
            },
            8,
            2,
        ),
        (
            EncoderConfig {
                stem_kernel: 4,
                stem_stride: 2,
                stem_padding: 1,
                stage_channels: vec![2, 3],
                embedding_dim: 3,
                projection_dim: 2,
                ..EncoderConfig::tiny()
            },
            8,
            3,
        ),
    ]
}

#[test]
fn encoder_and_projection() {
    for (i, (cfg, size, pairs)) in configs().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + i as u64);
        let params = jitter(&init_params::<f64>(&cfg, i as u64).unwrap(), &mut rng);
        let x = random(&[2 * pairs, 3, size, size], &mut rng, 0.0, 1.0);
        let err = check_all(&params, x, |tape, b, x| {
            let h = encoder_forward(tape, b, &cfg, x).map_err(unwrap_model)?;
            let z = project(tape, b, h).map_err(unwrap_model)?;
            weighted_sum(tape, z, 2)
        });
        assert!(err < TOLERANCE, "config {i}: {err}");
    }
}

/// Images whose channels sit at distinct random levels, so pooled
/// embeddings differ between samples. Pure per-pixel noise averages out
/// under pooling, the projected rows nearly coincide, and the contrastive
/// gradient then cancels down to the f64 differencing noise floor.
fn distinct_images(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let plane = size * size;
    let mut data = Vec::with_capacity(n * 3 * plane);
    for _ in 0..n * 3 {
        let level = rng.random_range(0.0..1.0);
        data.extend((0..plane).map(|_| level + rng.random_range(-0.1..0.1)));
    }
    Tensor::new(vec![n, 3, size, size], data).unwrap()
}

/// Parameter gradients only: image gradients are covered by
/// `encoder_and_projection`. The contrastive loss depends only on
/// embedding directions, so some early-layer gradients land near 1e-8,
/// where a few ulps of the O(1) loss over `2 * eps` dominate the relative
/// error; the fixed check point avoids such coordinates.
#[test]
fn encoder_projection_and_contrastive_loss() {
    const SEED: u64 = 5;
    let tiny = EncoderConfig::tiny();
    let cases = [
        (tiny.clone(), 8, 2),
        (EncoderConfig { se_enabled: false, ..tiny.clone() }, 8, 2),
        (tiny.clone(), 4, 3),
        (configs().remove(3).0, 8, 3),
    ];
    for (i, (cfg, size, pairs)) in cases.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let params = jitter(&init_params::<f64>(&cfg, SEED).unwrap(), &mut rng);
        let x = distinct_images(2 * pairs, size, &mut rng);
        let err = check_params(&params, x, |tape, b, x| {
            let h = encoder_forward(tape, b, &cfg, x).map_err(unwrap_model)?;
            let z = project(tape, b, h).map_err(unwrap_model)?;
            Ok(nt_xent_loss(tape, z, 0.5).expect("projection rows are unit"))
        });
        assert!(err < TOLERANCE, "case {i}: {err}");
    }
}

#[test]
fn encoder_and_classifier() {
    for (i, (cfg, size, pairs)) in configs().into_iter().enumerate().take(3) {
        let mut rng = ChaCha8Rng::seed_from_u64(60 + i as u64);
        let mut params = jitter(&init_params::<f64>(&cfg, i as u64).unwrap(), &mut rng);
        let head = init_classifier::<f64>(cfg.embedding_dim, 3);
        for (name, t) in head.iter() {
            params.insert(name, random(t.shape(), &mut rng, -1.0, 1.0)).unwrap();
        }
        let n = 2 * pairs;
        let labels: Vec<usize> = (0..n).map(|k| k % 3).collect();
        let x = random(&[n, 3, size, size], &mut rng, 0.0, 1.0);
        let err = check_all(&params, x, |tape, b, x| {
            let h = encoder_forward(tape, b, &cfg, x).map_err(unwrap_model)?;
            let logits = classify(tape, b, h).map_err(unwrap_model)?;
            tape.softmax_cross_entropy(logits, &labels)
        });
        assert!(err < TOLERANCE, "config {i}: {err}");
    }
}




