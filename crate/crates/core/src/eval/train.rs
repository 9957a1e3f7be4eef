use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sslse_autodiff::{Adam, AdamConfig, Params, Tape, Tensor};

use super::{ConfusionMatrix, Result};
use crate::imaging::RgbImage;
use crate::model::{classify, encoder_forward, images_to_tensor, init_classifier, EncoderConfig};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Class predictions of the linear head `classifier.{w,b}` on fixed
/// features.
pub fn predict(head: &Params<f32>, features: &[Vec<f32>]) -> Result<Vec<usize>> {
    let w = head.require("classifier.w")?;
    let b = head.require("classifier.b")?;
    let (d, k) = (w.shape()[0], w.shape()[1]);
    Ok(features
        .iter()
        .map(|f| {
            let mut logits = b.data().to_vec();
            for (x, row) in f[..d].iter().zip(w.data().chunks_exact(k)) {
                for (l, &wv) in logits.iter_mut().zip(row) {
                    *l += x * wv;
                }
            }
            argmax(&logits)
        })
        .collect())
}

pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_pairs(classes, truth.iter().copied().zip(predicted.iter().copied()))
}

/// Minibatch order for every epoch, drawn from one seeded stream.
fn epoch_orders(n: usize, epochs: usize, seed: u64) -> impl Iterator<Item = Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    (0..epochs).map(move |_| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    })
}

/// Per-feature mean and standard deviation over the training set; a
/// constant feature gets scale 1.
fn feature_moments(features: &[Vec<f32>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = features.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, &v) in mean.iter_mut().zip(f) {
            *m += f64::from(v) / n;
        }
    }
    let mut var = vec![0.0; dim];
    for f in features {
        for ((s, &v), m) in var.iter_mut().zip(f).zip(&mean) {
            *s += (f64::from(v) - m).powi(2) / n;
        }
    }
    let std = var.into_iter().map(|v| if v.sqrt() > 1e-6 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

/// Softmax regression from a zero-initialized head, trained with Adam on
/// cross-entropy over shuffled minibatches (the final partial batch is
/// kept).
///
/// Training runs on features standardized with training-set moments; the
/// returned head has the standardization folded into its weights, so it
/// applies to raw embeddings.
pub fn train_linear_probe(
    features: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Params<f32>> {
    let dim = features.first().map_or(0, Vec::len);
    let (mean, std) = feature_moments(features, dim);
    let standardized: Vec<Vec<f32>> = features
        .iter()
        .map(|f| {
            f.iter()
                .zip(mean.iter().zip(&std))
                .map(|(&v, (m, s))| ((f64::from(v) - m) / s) as f32)
                .collect()
        })
        .collect();
    let mut head = init_classifier::<f32>(dim, classes);
    let mut adam = Adam::new(AdamConfig {
        lr: learning_rate,
        ..AdamConfig::default()
    });
    for order in epoch_orders(features.len(), epochs, seed) {
        for batch in order.chunks(batch_size.max(1)) {
            let x: Vec<f32> = batch.iter().flat_map(|&i| standardized[i].iter().copied()).collect();
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let bound = head.bind(&mut tape, true);
            let x = tape.constant(Tensor::new(vec![batch.len(), dim], x)?);
            let logits = classify(&mut tape, &bound, x)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            tape.backward(loss)?;
            adam.step(&mut head, &bound.gradients(&tape))?;
        }
    }
    fold_standardization(&head, &mean, &std)
}

/// `W' = W / s` row-wise and `b' = b - m W'`, so that
/// `x W' + b' = ((x - m) / s) W + b`.
fn fold_standardization(head: &Params<f32>, mean: &[f64], std: &[f64]) -> Result<Params<f32>> {
    let w = head.require("classifier.w")?;
    let b = head.require("classifier.b")?;
    let k = w.shape()[1];
    let mut folded_w = vec![0.0f32; w.len()];
    let mut folded_b: Vec<f64> = b.data().iter().map(|&v| f64::from(v)).collect();
    for (d, (row, out)) in w.data().chunks_exact(k).zip(folded_w.chunks_exact_mut(k)).enumerate() {
        for ((o, &wv), fb) in out.iter_mut().zip(row).zip(folded_b.iter_mut()) {
            let scaled = f64::from(wv) / std[d];
            *o = scaled as f32;
            *fb -= mean[d] * scaled;
        }
    }
    let mut out = Params::new();
    out.insert("classifier.w", Tensor::new(w.shape().to_vec(), folded_w)?)?;
    out.insert("classifier.b", Tensor::new(vec![k], folded_b.into_iter().map(|v| v as f32).collect())?)?;
    Ok(out)
}

/// Cross-entropy training of encoder and classifier together. `params`
/// must hold `encoder.*` and `classifier.*`; any other entries (such as a
/// projection head) are dropped.
#[allow(clippy::too_many_arguments)]
pub fn train_end_to_end(
    encoder: &EncoderConfig,
    params: &Params<f32>,
    images: &[&RgbImage],
    labels: &[usize],
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Params<f32>> {
    let mut params = params.filtered(|n| n.starts_with("encoder.") || n.starts_with("classifier."));
    let mut adam = Adam::new(AdamConfig {
        lr: learning_rate,
        ..AdamConfig::default()
    });
    for order in epoch_orders(images.len(), epochs, seed) {
        for batch in order.chunks(batch_size.max(1)) {
            let imgs: Vec<&RgbImage> = batch.iter().map(|&i| images[i]).collect();
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let x = tape.constant(images_to_tensor(&imgs)?);
            let h = encoder_forward(&mut tape, &bound, encoder, x)?;
            let logits = classify(&mut tape, &bound, h)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            tape.backward(loss)?;
            adam.step(&mut params, &bound.gradients(&tape))?;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[-1.0, -2.0]), 0);
    }

    #[test]
    fn folded_head_matches_standardized_logits() {
        let mut head = init_classifier::<f32>(2, 2);
        head.get_mut("classifier.w").unwrap().data_mut().copy_from_slice(&[1.0, -1.0, 0.5, 2.0]);
        head.get_mut("classifier.b").unwrap().data_mut().copy_from_slice(&[0.1, -0.2]);
        let (mean, std) = (vec![3.0, -1.0], vec![2.0, 0.5]);
        let folded = fold_standardization(&head, &mean, &std).unwrap();
        let x = [4.0f64, 0.0];
        let z = [(x[0] - 3.0) / 2.0, (x[1] + 1.0) / 0.5];
        let expected = [z[0] * 1.0 + z[1] * 0.5 + 0.1, -z[0] + z[1] * 2.0 - 0.2];
        let w = folded.get("classifier.w").unwrap().data();
        let b = folded.get("classifier.b").unwrap().data();
        for k in 0..2 {
            let got = x[0] * f64::from(w[k]) + x[1] * f64::from(w[2 + k]) + f64::from(b[k]);
            assert!((got - expected[k]).abs() < 1e-6, "{got} vs {}", expected[k]);
        }
    }

    #[test]
    fn constant_features_keep_unit_scale() {
        let (mean, std) = feature_moments(&[vec![1.0, 2.0], vec![1.0, 4.0]], 2);
        assert_eq!(mean, [1.0, 3.0]);
        assert_eq!(std, [1.0, 1.0]);
    }

    #[test]
    fn zero_head_predicts_class_zero() {
        let head = init_classifier::<f32>(3, 4);
        let feats = vec![vec![1.0, -2.0, 0.5]; 5];
        assert_eq!(predict(&head, &feats).unwrap(), [0; 5]);
    }
}
