use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sslse_autodiff::Tensor;

use super::{Result, SslError};
use crate::imaging::RgbImage;

/// One stochastic transform, applied with probability `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentOp {
    /// Rotation by a uniformly drawn multiple of 90 degrees (0 or 180 only
    /// for non-square images).
    Rotate90 { p: f64 },
    /// Small-angle rotation with nearest sampling and edge clamping.
    Rotate { p: f64, max_degrees: f64 },
    /// Separable Gaussian blur with sigma (pixels) drawn from the range.
    GaussianBlur { p: f64, sigma: [f64; 2] },
    /// Additive white noise with sigma drawn from the range, then clamped.
    GaussianNoise { p: f64, sigma: [f64; 2] },
    /// Square crop covering a fraction of the area drawn from `scale`,
    /// resized back with nearest sampling.
    CropResize { p: f64, scale: [f64; 2] },
    /// Zeroes a square whose side is a fraction of the image side.
    Cutout { p: f64, size: [f64; 2] },
}

impl AugmentOp {
    pub fn probability(&self) -> f64 {
        match *self {
            Self::Rotate90 { p }
            | Self::Rotate { p, .. }
            | Self::GaussianBlur { p, .. }
            | Self::GaussianNoise { p, .. }
            | Self::CropResize { p, .. }
            | Self::Cutout { p, .. } => p,
        }
    }

    fn range(&self) -> Option<(&'static str, [f64; 2], f64)> {
        match *self {
            Self::GaussianBlur { sigma, .. } => Some(("gaussian_blur sigma", sigma, f64::INFINITY)),
            Self::GaussianNoise { sigma, .. } => Some(("gaussian_noise sigma", sigma, f64::INFINITY)),
            Self::CropResize { scale, .. } => Some(("crop_resize scale", scale, 1.0)),
            Self::Cutout { size, .. } => Some(("cutout size", size, 1.0)),
            Self::Rotate { max_degrees, .. } => Some(("rotate max_degrees", [0.0, max_degrees], 180.0)),
            Self::Rotate90 { .. } => None,
        }
    }
}

/// Ordered augmentation chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub ops: Vec<AugmentOp>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            ops: vec![
                AugmentOp::CropResize { p: 1.0, scale: [0.8, 1.0] },
                AugmentOp::GaussianNoise { p: 0.8, sigma: [0.02, 0.1] },
            ],
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SslError::InvalidAugmentation(m));
        if self.ops.is_empty() {
            return bad("the chain needs at least one op".into());
        }
        for op in &self.ops {
            let p = op.probability();
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
            if let Some((name, [lo, hi], max)) = op.range() {
                if !(lo >= 0.0 && lo <= hi && hi <= max) {
                    return bad(format!("{name} range [{lo}, {hi}] is invalid"));
                }
            }
            if let AugmentOp::CropResize { scale, .. } | AugmentOp::Cutout { size: scale, .. } = op {
                if scale[0] <= 0.0 {
                    return bad(format!("{op:?} range must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Planar `3 x H x W` image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl View {
    pub fn from_image(img: &RgbImage) -> Self {
        let (h, w) = (img.height(), img.width());
        let plane = h * w;
        let mut data = vec![0.0f32; 3 * plane];
        for (i, px) in img.pixels().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = f32::from(px[c]) / 255.0;
            }
        }
        Self { height: h, width: w, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        Tensor::new(vec![3, self.height, self.width], self.data).expect("planar length matches")
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Rebuilds the view from a per-pixel source coordinate map.
    fn remap(&self, out_h: usize, out_w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(3 * out_h * out_w);
        for c in 0..3 {
            for y in 0..out_h {
                for x in 0..out_w {
                    let (sy, sx) = src(y, x);
                    data.push(self.at(c, sy, sx));
                }
            }
        }
        Self { height: out_h, width: out_w, data }
    }

    /// Counter-clockwise rotation by `k` quarter turns.
    pub fn rotate90(&self, k: u8) -> Self {
        let (h, w) = (self.height, self.width);
        match k % 4 {
            0 => self.clone(),
            1 => self.remap(w, h, |y, x| (x, w - 1 - y)),
            2 => self.remap(h, w, |y, x| (h - 1 - y, w - 1 - x)),
            _ => self.remap(w, h, |y, x| (h - 1 - x, y)),
        }
    }

    fn rotate(&self, degrees: f64) -> Self {
        let (h, w) = (self.height, self.width);
        let (sin, cos) = degrees.to_radians().sin_cos();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        self.remap(h, w, |y, x| {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sy = (cy + dx * sin + dy * cos).round().clamp(0.0, (h - 1) as f64);
            let sx = (cx + dx * cos - dy * sin).round().clamp(0.0, (w - 1) as f64);
            (sy as usize, sx as usize)
        })
    }

    fn crop_resize(&self, top: usize, left: usize, side_h: usize, side_w: usize) -> Self {
        let (h, w) = (self.height, self.width);
        self.remap(h, w, |y, x| (top + y * side_h / h, left + x * side_w / w))
    }

    fn blur(&self, sigma: f64) -> Self {
        let radius = (3.0 * sigma).ceil().max(1.0) as isize;
        let weights: Vec<f32> = (-radius..=radius)
            .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
            .map(|v| v as f32)
            .collect();
        let total: f32 = weights.iter().sum();
        let weights: Vec<f32> = weights.iter().map(|v| v / total).collect();
        let (h, w) = (self.height as isize, self.width as isize);
        let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;

        let mut tmp = vec![0.0f32; self.data.len()];
        for (src, dst) in self.data.chunks(self.width).zip(tmp.chunks_mut(self.width)) {
            for (x, out) in dst.iter_mut().enumerate() {
                *out = weights
                    .iter()
                    .enumerate()
                    .map(|(i, wt)| wt * src[clamp(x as isize + i as isize - radius, w)])
                    .sum();
            }
        }
        let mut data = vec![0.0f32; self.data.len()];
        let plane = self.height * self.width;
        for (src, dst) in tmp.chunks(plane).zip(data.chunks_mut(plane)) {
            for y in 0..self.height {
                for x in 0..self.width {
                    dst[y * self.width + x] = weights
                        .iter()
                        .enumerate()
                        .map(|(i, wt)| wt * src[clamp(y as isize + i as isize - radius, h) * self.width + x])
                        .sum();
                }
            }
        }
        Self { data, ..*self }
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Applies the chain once. The RNG is consumed identically whether or not
/// an op fires, apart from the op's own parameter draws.
pub fn augment<R: Rng>(src: &View, spec: &AugmentationSpec, rng: &mut R) -> View {
    let mut v = src.clone();
    for op in &spec.ops {
        if !rng.random_bool(op.probability()) {
            continue;
        }
        v = match *op {
            AugmentOp::Rotate90 { .. } => {
                let k = if v.height == v.width {
                    rng.random_range(0..4u8)
                } else {
                    2 * rng.random_range(0..2u8)
                };
                v.rotate90(k)
            }
            AugmentOp::Rotate { max_degrees, .. } => v.rotate(uniform(rng, [-max_degrees, max_degrees])),
            AugmentOp::GaussianBlur { sigma, .. } => {
                let s = uniform(rng, sigma);
                if s > 0.0 {
                    v.blur(s)
                } else {
                    v
                }
            }
            AugmentOp::GaussianNoise { sigma, .. } => {
                let s = uniform(rng, sigma) as f32;
                let noise = Normal::new(0.0f32, s).expect("sigma validated non-negative");
                for x in &mut v.data {
                    *x = (*x + noise.sample(rng)).clamp(0.0, 1.0);
                }
                v
            }
            AugmentOp::CropResize { scale, .. } => {
                let frac = uniform(rng, scale).sqrt();
                let side_h = ((v.height as f64 * frac).round() as usize).clamp(1, v.height);
                let side_w = ((v.width as f64 * frac).round() as usize).clamp(1, v.width);
                let top = rng.random_range(0..=v.height - side_h);
                let left = rng.random_range(0..=v.width - side_w);
                v.crop_resize(top, left, side_h, side_w)
            }
            AugmentOp::Cutout { size, .. } => {
                let frac = uniform(rng, size);
                let side_h = ((v.height as f64 * frac).round() as usize).min(v.height);
                let side_w = ((v.width as f64 * frac).round() as usize).min(v.width);
                let top = rng.random_range(0..=v.height - side_h);
                let left = rng.random_range(0..=v.width - side_w);
                let (h, w) = (v.height, v.width);
                for c in 0..3 {
                    for y in top..top + side_h {
                        let row = (c * h + y) * w;
                        v.data[row + left..row + left + side_w].fill(0.0);
                    }
                }
                v
            }
        };
    }
    v
}

/// Two independent draws of the chain on one source image.
pub fn augment_pair<R: Rng>(img: &RgbImage, spec: &AugmentationSpec, rng: &mut R) -> (View, View) {
    let src = View::from_image(img);
    let a = augment(&src, spec, rng);
    let b = augment(&src, spec, rng);
    (a, b)
}
