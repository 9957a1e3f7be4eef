//! Residual CNN encoder with squeeze-and-excitation, projection head and
//! linear classification head, built on the autodiff tape.
//!
//! Parameter names are prefixed `encoder.`, `projection.` or `classifier.`
//! so heads can be frozen or swapped by prefix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sslse_autodiff::{AutodiffError, Bound, Conv2dSpec, Params, Real, Tape, Tensor, Var};
use thiserror::Error;

use crate::imaging::RgbImage;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("images in one batch must share a size: {0}x{1} vs {2}x{3}")]
    MixedImageSizes(usize, usize, usize, usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub se_enabled: bool,
    pub se_ratio: usize,
    /// Must equal the last stage width; the embedding is its pooled output.
    pub embedding_dim: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub num_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            stem_kernel: 8,
            stem_stride: 4,
            stem_padding: 2,
            stage_channels: vec![16, 32, 64, 128],
            blocks_per_stage: 1,
            se_enabled: true,
            se_ratio: 8,
            embedding_dim: 128,
            projection_hidden: 128,
            projection_dim: 64,
            num_classes: 2,
        }
    }
}

impl EncoderConfig {
    /// Small configuration for gradient checks and fast tests: 3x3 stem
    /// at stride 1, two stages.
    pub fn tiny() -> Self {
        Self {
            stem_kernel: 3,
            stem_stride: 1,
            stem_padding: 1,
            stage_channels: vec![2, 4],
            se_ratio: 2,
            embedding_dim: 4,
            projection_hidden: 4,
            projection_dim: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return bad(format!("stage widths must be non-empty and positive: {:?}", self.stage_channels));
        }
        for (name, v) in [
            ("input_channels", self.input_channels),
            ("stem_kernel", self.stem_kernel),
            ("stem_stride", self.stem_stride),
            ("blocks_per_stage", self.blocks_per_stage),
            ("se_ratio", self.se_ratio),
            ("projection_hidden", self.projection_hidden),
            ("projection_dim", self.projection_dim),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        let last = *self.stage_channels.last().expect("non-empty");
        if self.embedding_dim != last {
            return bad(format!("embedding_dim {} must equal the last stage width {last}", self.embedding_dim));
        }
        Ok(())
    }

    pub fn se_hidden(&self, channels: usize) -> usize {
        (channels / self.se_ratio).max(1)
    }

    /// Spatial size of the last stage for a square input, if every
    /// convolution divides evenly.
    pub fn final_spatial(&self, input: usize) -> Option<usize> {
        let span = (input + 2 * self.stem_padding).checked_sub(self.stem_kernel)?;
        if span % self.stem_stride != 0 {
            return None;
        }
        let mut size = span / self.stem_stride + 1;
        for _ in 1..self.stage_channels.len() {
            if size < 2 || !size.is_multiple_of(2) {
                return None;
            }
            size /= 2;
        }
        Some(size)
    }
}

fn block_prefix(stage: usize, block: usize) -> String {
    format!("encoder.stage{stage}.block{block}")
}

struct Init<T> {
    rng: ChaCha8Rng,
    params: Params<T>,
}

impl<T: Real> Init<T> {
    fn he(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> Result<()> {
        let std = (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::from_f64_lossy(z * std)
            })
            .collect();
        self.params.insert(name, Tensor::new(shape, data)?)?;
        Ok(())
    }

    fn zeros(&mut self, name: String, shape: Vec<usize>) -> Result<()> {
        self.params.insert(name, Tensor::zeros(shape))?;
        Ok(())
    }

    fn conv(&mut self, prefix: &str, out_c: usize, in_c: usize, k: usize) -> Result<()> {
        self.he(format!("{prefix}.w"), vec![out_c, in_c, k, k], in_c * k * k)?;
        self.zeros(format!("{prefix}.b"), vec![out_c])
    }

    fn dense(&mut self, prefix: &str, input: usize, output: usize) -> Result<()> {
        self.he(format!("{prefix}.w"), vec![input, output], input)?;
        self.zeros(format!("{prefix}.b"), vec![output])
    }
}

/// Encoder and projection parameters: He-normal weights, zero biases.
///
/// SE parameters are created even when SE is disabled so that the other
/// tensors draw identical random values in both settings.
pub fn init_params<T: Real>(cfg: &EncoderConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: Params::new(),
    };
    let first = cfg.stage_channels[0];
    init.conv("encoder.stem", first, cfg.input_channels, cfg.stem_kernel)?;
    let mut prev = first;
    for (s, &c) in cfg.stage_channels.iter().enumerate() {
        if s > 0 {
            init.conv(&format!("encoder.stage{s}.down"), c, prev, 2)?;
        }
        for b in 0..cfg.blocks_per_stage {
            let p = block_prefix(s, b);
            init.conv(&format!("{p}.conv1"), c, c, 3)?;
            init.conv(&format!("{p}.conv2"), c, c, 3)?;
            let hidden = cfg.se_hidden(c);
            init.dense(&format!("{p}.se.fc1"), c, hidden)?;
            init.dense(&format!("{p}.se.fc2"), hidden, c)?;
        }
        prev = c;
    }
    init.dense("projection.fc1", cfg.embedding_dim, cfg.projection_hidden)?;
    init.dense("projection.fc2", cfg.projection_hidden, cfg.projection_dim)?;
    Ok(init.params)
}

/// Zero-initialized linear head `D -> K`.
pub fn init_classifier<T: Real>(embedding_dim: usize, num_classes: usize) -> Params<T> {
    let mut p = Params::new();
    p.insert("classifier.w", Tensor::zeros([embedding_dim, num_classes]))
        .expect("fresh set");
    p.insert("classifier.b", Tensor::zeros([num_classes])).expect("fresh set");
    p
}

fn conv<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var, spec: Conv2dSpec) -> Result<Var> {
    let w = p.var(&format!("{prefix}.w"))?;
    let b = p.var(&format!("{prefix}.b"))?;
    Ok(tape.conv2d(x, w, b, spec)?)
}

fn dense<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{prefix}.w"))?;
    let b = p.var(&format!("{prefix}.b"))?;
    Ok(tape.dense(x, w, b)?)
}

/// Squeeze (global average pool), excitation (two dense layers ending in
/// a sigmoid gate) and channel recalibration. Parameters are read from
/// `{prefix}.fc1` and `{prefix}.fc2`.
pub fn se_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let squeezed = tape.global_avg_pool(x)?;
    let hidden = dense(tape, p, &format!("{prefix}.fc1"), squeezed)?;
    let hidden = tape.relu(hidden);
    let gate = dense(tape, p, &format!("{prefix}.fc2"), hidden)?;
    let gate = tape.sigmoid(gate);
    Ok(tape.scale_channels(x, gate)?)
}

/// `images (N x C x H x W) -> N x D` embeddings.
pub fn encoder_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &EncoderConfig, images: Var) -> Result<Var> {
    let stem = Conv2dSpec::new(cfg.stem_stride, cfg.stem_padding);
    let same = Conv2dSpec::new(1, 1);
    let down = Conv2dSpec::new(2, 0);

    let x = conv(tape, p, "encoder.stem", images, stem)?;
    let mut x = tape.relu(x);
    for s in 0..cfg.stage_channels.len() {
        if s > 0 {
            let y = conv(tape, p, &format!("encoder.stage{s}.down"), x, down)?;
            x = tape.relu(y);
        }
        for b in 0..cfg.blocks_per_stage {
            let prefix = block_prefix(s, b);
            let y = conv(tape, p, &format!("{prefix}.conv1"), x, same)?;
            let y = tape.relu(y);
            let mut y = conv(tape, p, &format!("{prefix}.conv2"), y, same)?;
            if cfg.se_enabled {
                y = se_forward(tape, p, &format!("{prefix}.se"), y)?;
            }
            let y = tape.add(y, x)?;
            x = tape.relu(y);
        }
    }
    Ok(tape.global_avg_pool(x)?)
}

/// Projection head: `l2_normalize(fc2(relu(fc1(h))))`.
pub fn project<T: Real>(tape: &mut Tape<T>, p: &Bound, h: Var) -> Result<Var> {
    let z = dense(tape, p, "projection.fc1", h)?;
    let z = tape.relu(z);
    let z = dense(tape, p, "projection.fc2", z)?;
    Ok(tape.l2_normalize(z)?)
}

/// Linear head logits `N x K`.
pub fn classify<T: Real>(tape: &mut Tape<T>, p: &Bound, h: Var) -> Result<Var> {
    dense(tape, p, "classifier", h)
}

/// Stacks images into `N x 3 x H x W` with pixel values scaled by 1/255.
pub fn images_to_tensor<T: Real>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Ok(Tensor::zeros([0, 3, 0, 0]));
    };
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let scale = T::from_f64_lossy(1.0 / 255.0);
    let mut data = vec![T::zero(); images.len() * 3 * plane];
    for (img, out) in images.iter().zip(data.chunks_mut(3 * plane)) {
        if (img.height(), img.width()) != (h, w) {
            return Err(ModelError::MixedImageSizes(h, w, img.height(), img.width()));
        }
        for (i, px) in img.pixels().chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = T::from_f64_lossy(f64::from(px[c])) * scale;
            }
        }
    }
    Ok(Tensor::new(vec![images.len(), 3, h, w], data)?)
}

/// Frozen-encoder embeddings, computed in batches of `batch`.
pub fn embed<T: Real>(cfg: &EncoderConfig, params: &Params<T>, images: &[&RgbImage], batch: usize) -> Result<Vec<Vec<T>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let x = tape.constant(images_to_tensor(chunk)?);
        let h = encoder_forward(&mut tape, &p, cfg, x)?;
        out.extend(tape.value(h).data().chunks(cfg.embedding_dim).map(<[T]>::to_vec));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind_all(tape: &mut Tape<f64>, params: &Params<f64>) -> Bound {
        params.bind(tape, true)
    }

    fn se_params(c: usize, h: usize, w1: f64, w2: f64) -> Params<f64> {
        let mut p = Params::new();
        p.insert("se.fc1.w", Tensor::full([c, h], w1)).unwrap();
        p.insert("se.fc1.b", Tensor::zeros([h])).unwrap();
        p.insert("se.fc2.w", Tensor::full([h, c], w2)).unwrap();
        p.insert("se.fc2.b", Tensor::zeros([c])).unwrap();
        p
    }

    fn random_images(n: usize, size: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 3 * size * size)
            .map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0))
            .collect();
        Tensor::new(vec![n, 3, size, size], data).unwrap()
    }

    #[test]
    fn zero_se_weights_halve_input() {
        let mut tape = Tape::new();
        let p = bind_all(&mut tape, &se_params(3, 1, 0.0, 0.0));
        let x = tape.constant(random_images(2, 4, 1));
        let y = se_forward(&mut tape, &p, "se", x).unwrap();
        for (a, b) in tape.value(x).data().iter().zip(tape.value(y).data()) {
            assert_eq!(*b, 0.5 * a);
        }
    }

    #[test]
    fn single_channel_gate() {
        let mut tape = Tape::new();
        let p = bind_all(&mut tape, &se_params(1, 1, 2.0, 1.0));
        let x = tape.constant(Tensor::full([1, 1, 2, 2], 1.0));
        let y = se_forward(&mut tape, &p, "se", x).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((expected - 0.8808).abs() < 1e-4);
        for v in tape.value(y).data() {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn default_embedding_shape() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.final_spatial(224), Some(7));
        let params = init_params::<f32>(&cfg, 0).unwrap();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let x = tape.constant(random_images(2, 224, 3).cast::<f32>());
        let h = encoder_forward(&mut tape, &p, &cfg, x).unwrap();
        assert_eq!(tape.value(h).shape(), [2, 128]);
        let z = project(&mut tape, &p, h).unwrap();
        assert_eq!(tape.value(z).shape(), [2, 64]);
    }

    fn embed_f64(cfg: &EncoderConfig, params: &Params<f64>, images: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let h = encoder_forward(&mut tape, &p, cfg, x).unwrap();
        tape.value(h).clone()
    }

    #[test]
    fn se_disabled_ignores_se_parameters() {
        let cfg = EncoderConfig { se_enabled: false, ..EncoderConfig::tiny() };
        let params = init_params::<f64>(&cfg, 5).unwrap();
        let mut scrambled = params.clone();
        let names: Vec<String> = params.names().filter(|n| n.contains(".se.")).map(String::from).collect();
        assert!(!names.is_empty());
        for n in &names {
            for v in scrambled.get_mut(n).unwrap().data_mut() {
                *v = 123.0;
            }
        }
        let x = random_images(3, 8, 9);
        assert_eq!(embed_f64(&cfg, &params, &x), embed_f64(&cfg, &scrambled, &x));
        let with_se = EncoderConfig { se_enabled: true, ..cfg.clone() };
        assert_ne!(embed_f64(&with_se, &params, &x), embed_f64(&with_se, &scrambled, &x));
    }

    #[test]
    fn batch_permutation_equivariance() {
        let cfg = EncoderConfig::tiny();
        let params = init_params::<f64>(&cfg, 2).unwrap();
        let x = random_images(3, 8, 4);
        let plane = 3 * 64;
        let perm = [2usize, 0, 1];
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| x.data()[i * plane..(i + 1) * plane].to_vec()).collect();
        let xp = Tensor::new(x.shape().to_vec(), permuted).unwrap();
        let (h, hp) = (embed_f64(&cfg, &params, &x), embed_f64(&cfg, &params, &xp));
        let d = cfg.embedding_dim;
        for (row, &src) in perm.iter().enumerate() {
            assert_eq!(&hp.data()[row * d..(row + 1) * d], &h.data()[src * d..(src + 1) * d]);
        }
    }

    #[test]
    fn identical_images_identical_rows() {
        let cfg = EncoderConfig::tiny();
        let params = init_params::<f64>(&cfg, 2).unwrap();
        let one = random_images(1, 8, 4);
        let two = Tensor::new(vec![2, 3, 8, 8], [one.data(), one.data()].concat()).unwrap();
        let h = embed_f64(&cfg, &params, &two);
        assert_eq!(h.data()[..4], h.data()[4..]);
    }

    #[test]
    fn projection_rows_unit_and_bias_only() {
        let cfg = EncoderConfig::tiny();
        let mut params = init_params::<f64>(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let h = tape.constant(random_images(2, 2, 8).reshape([6, 4]).unwrap());
        let z = project(&mut tape, &p, h).unwrap();
        for row in tape.value(z).data().chunks(3) {
            assert!((row.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        }

        for name in ["projection.fc1.w", "projection.fc2.w"] {
            params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        params.get_mut("projection.fc2.b").unwrap().data_mut().copy_from_slice(&[1.0, 2.0, 2.0]);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let h = tape.constant(random_images(2, 2, 8).reshape([6, 4]).unwrap());
        let z = project(&mut tape, &p, h).unwrap();
        for row in tape.value(z).data().chunks(3) {
            assert_eq!(row, [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        }
    }

    #[test]
    fn classifier_heads() {
        let head = init_classifier::<f64>(4, 3);
        let mut tape = Tape::new();
        let p = head.bind(&mut tape, true);
        let h = tape.constant(random_images(1, 2, 1).reshape([3, 4]).unwrap());
        let logits = classify(&mut tape, &p, h).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[0, 1, 2]).unwrap();
        assert!((tape.value(loss).item() - 3f64.ln()).abs() < 1e-12);

        let mut head = init_classifier::<f64>(2, 2);
        head.get_mut("classifier.w").unwrap().data_mut().copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
        let mut tape = Tape::new();
        let p = head.bind(&mut tape, false);
        let h = tape.constant(Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap());
        let logits = classify(&mut tape, &p, h).unwrap();
        let l = tape.value(logits).data();
        assert!((l[0] - (0.6 + 1.6)).abs() < 1e-12);
        assert!((l[1] - (-0.6 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn init_is_seeded_and_he_scaled() {
        let cfg = EncoderConfig::default();
        let a = init_params::<f32>(&cfg, 11).unwrap();
        assert_eq!(a, init_params::<f32>(&cfg, 11).unwrap());
        assert_ne!(a, init_params::<f32>(&cfg, 12).unwrap());

        let w = a.get("encoder.stage3.block0.conv1.w").unwrap();
        assert!(w.len() >= 10_000);
        let n = w.len() as f64;
        let mean = w.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = w.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let target = (2.0 / (128.0 * 9.0f64)).sqrt();
        assert!((var.sqrt() / target - 1.0).abs() < 0.1);
        assert!(a.get("encoder.stem.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig { embedding_dim: 64, ..Default::default() }.validate().is_err());
        assert!(EncoderConfig { se_ratio: 0, ..Default::default() }.validate().is_err());
        assert_eq!(EncoderConfig::default().se_hidden(4), 1);
        assert_eq!(EncoderConfig::tiny().final_spatial(8), Some(4));
        assert_eq!(EncoderConfig::default().final_spatial(225), None);
    }

    #[test]
    fn image_tensor_layout() {
        let img = RgbImage::new(1, 2, vec![255, 0, 51, 0, 255, 102]).unwrap();
        let t: Tensor<f64> = images_to_tensor(&[&img]).unwrap();
        assert_eq!(t.shape(), [1, 3, 1, 2]);
        assert_eq!(t.data(), [1.0, 0.0, 0.0, 1.0, 0.2, 0.4]);
    }
}
