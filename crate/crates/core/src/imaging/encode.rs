use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ColorLut, EegImage, ImagingError, Result, RgbImage};
use crate::ingest::{iter_windows, whole_count, EegRecording, Window, WindowSpec};

/// Raw or normalized segment values; column `j` is temporal segment `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMatrix {
    rows: usize,
    columns: Vec<Vec<f64>>,
}

impl SegmentMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if rows == 0 || columns.iter().any(|c| c.len() != rows) {
            return Err(ImagingError::ZeroDimension { height: rows, width: columns.len() });
        }
        Ok(Self { rows, columns })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.columns[col]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Normalizes every column independently.
    pub fn normalized(&self) -> Self {
        Self {
            rows: self.rows,
            columns: self.columns.iter().map(|c| normalize_segment(c)).collect(),
        }
    }
}

/// Cuts a `channels x m` block into segment columns, each flattened
/// channel-major.
pub fn segment_window(block: &[&[f64]], spec: &WindowSpec, rate_hz: f64) -> Result<SegmentMatrix> {
    let per_segment = whole_count(spec.segment_ms / 1000.0 * rate_hz).ok_or(ImagingError::NonIntegralSegment {
        segment_ms: spec.segment_ms,
        rate_hz,
    })?;
    let cols = spec.segments_per_window()?;
    let expected = per_segment * cols;
    if block.is_empty() {
        return Err(ImagingError::EmptyBlock);
    }
    if let Some(ch) = block.iter().find(|ch| ch.len() != expected) {
        return Err(ImagingError::BlockLength { expected, found: ch.len() });
    }
    let columns = (0..cols)
        .map(|j| {
            block
                .iter()
                .flat_map(|ch| &ch[j * per_segment..(j + 1) * per_segment])
                .copied()
                .collect()
        })
        .collect();
    SegmentMatrix::from_columns(columns)
}

/// Min-max scales to [0, 1]; a constant column maps to 0.5.
pub fn normalize_segment(column: &[f64]) -> Vec<f64> {
    let (lo, hi) = column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi == lo {
        return vec![0.5; column.len()];
    }
    let span = hi - lo;
    column.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Maps each value `v` to `lut[floor(v * 255 + 0.5)]`.
pub fn apply_colormap(matrix: &SegmentMatrix, lut: &ColorLut) -> Result<RgbImage> {
    let (h, w) = (matrix.rows(), matrix.cols());
    let mut pixels = vec![0u8; h * w * 3];
    for (col, values) in matrix.columns().iter().enumerate() {
        for (row, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ImagingError::ValueOutOfRange { row, col, value });
            }
            let index = (value * 255.0 + 0.5).floor() as u8;
            let at = (row * w + col) * 3;
            pixels[at..at + 3].copy_from_slice(&lut.get(index));
        }
    }
    RgbImage::new(h, w, pixels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    #[default]
    Nearest,
    Bilinear,
}

/// `out(y, x) = in(floor(y * h / out_h), floor(x * w / out_w))`.
pub fn resize_nearest(img: &RgbImage, out_h: usize, out_w: usize) -> Result<RgbImage> {
    if out_h == 0 || out_w == 0 {
        return Err(ImagingError::ZeroDimension { height: out_h, width: out_w });
    }
    let (h, w) = (img.height(), img.width());
    let src_x: Vec<usize> = (0..out_w).map(|x| x * w / out_w).collect();
    let mut pixels = Vec::with_capacity(out_h * out_w * 3);
    for y in 0..out_h {
        let row = &img.pixels()[(y * h / out_h) * w * 3..][..w * 3];
        for &sx in &src_x {
            pixels.extend_from_slice(&row[sx * 3..sx * 3 + 3]);
        }
    }
    RgbImage::new(out_h, out_w, pixels)
}

/// Half-pixel-centered bilinear scaling. Produces colors outside the
/// source palette.
pub fn resize_bilinear(img: &RgbImage, out_h: usize, out_w: usize) -> Result<RgbImage> {
    if out_h == 0 || out_w == 0 {
        return Err(ImagingError::ZeroDimension { height: out_h, width: out_w });
    }
    let (h, w) = (img.height(), img.width());
    let taps = |out: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * src as f64 / out as f64 - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                (i0, (i0 + 1).min(src - 1), s - i0 as f64)
            })
            .collect()
    };
    let (ys, xs) = (taps(out_h, h), taps(out_w, w));
    let p = |y: usize, x: usize, c: usize| f64::from(img.pixels()[(y * w + x) * 3 + c]);
    let mut pixels = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = p(y0, x0, c) * (1.0 - fx) + p(y0, x1, c) * fx;
                let bottom = p(y1, x0, c) * (1.0 - fx) + p(y1, x1, c) * fx;
                pixels.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(out_h, out_w, pixels)
}

pub fn resize(img: &RgbImage, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<RgbImage> {
    match mode {
        ResizeMode::Nearest => resize_nearest(img, out_h, out_w),
        ResizeMode::Bilinear => resize_bilinear(img, out_h, out_w),
    }
}

/// Encodes a block with the default table at 224x224, nearest scaling.
pub fn encode_window(block: &[&[f64]], spec: &WindowSpec, rate_hz: f64, lut: &ColorLut) -> Result<RgbImage> {
    ImageEncoder::new(lut.clone()).encode_block(block, spec, rate_hz)
}

/// Encoding pipeline settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoder {
    pub lut: ColorLut,
    pub resize: ResizeMode,
    pub height: usize,
    pub width: usize,
}

impl Default for ImageEncoder {
    fn default() -> Self {
        Self::new(ColorLut::viridis())
    }
}

impl ImageEncoder {
    pub fn new(lut: ColorLut) -> Self {
        Self {
            lut,
            resize: ResizeMode::Nearest,
            height: 224,
            width: 224,
        }
    }

    /// The colormapped segment matrix before scaling.
    pub fn encode_unscaled(&self, block: &[&[f64]], spec: &WindowSpec, rate_hz: f64) -> Result<RgbImage> {
        apply_colormap(&segment_window(block, spec, rate_hz)?.normalized(), &self.lut)
    }

    pub fn encode_block(&self, block: &[&[f64]], spec: &WindowSpec, rate_hz: f64) -> Result<RgbImage> {
        resize(&self.encode_unscaled(block, spec, rate_hz)?, self.height, self.width, self.resize)
    }

    pub fn encode(&self, window: &Window<'_>, spec: &WindowSpec, rate_hz: f64, source_id: &str) -> Result<EegImage> {
        let window_index = u32::try_from(window.index).map_err(|_| ImagingError::FieldOverflow {
            field: "window index",
            value: window.index,
        })?;
        Ok(EegImage {
            image: self.encode_block(&window.channels, spec, rate_hz)?,
            label: window.label,
            source_id: source_id.to_string(),
            window_index,
        })
    }
}

/// Encodes every window of a recording, in window order.
pub fn encode_recording(rec: &EegRecording, spec: &WindowSpec, encoder: &ImageEncoder) -> Result<Vec<EegImage>> {
    let windows: Vec<Window<'_>> = iter_windows(rec, spec)?.collect();
    windows
        .par_iter()
        .map(|w| encoder.encode(w, spec, rec.sample_rate_hz(), &rec.source_id))
        .collect()
}
