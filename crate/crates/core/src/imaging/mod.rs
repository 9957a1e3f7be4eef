//! Windowed EEG to RGB image encoding and on-disk image storage.
//!
//! A window is cut into fixed-duration segments; each segment becomes one
//! column (channel-major when there are several channels), each column is
//! min-max normalized, mapped through a 256-entry color table, and the
//! result is scaled to the network input size.

mod encode;
mod lut;
mod storage;

use std::path::PathBuf;

use thiserror::Error;

pub use encode::{
    apply_colormap, encode_recording, encode_window, normalize_segment, resize, resize_bilinear, resize_nearest,
    segment_window, ImageEncoder, ResizeMode, SegmentMatrix,
};
pub use lut::{luminance, ColorLut, Rgb, VIRIDIS_SHA256};
pub use storage::{
    decode_eegimg, encode_eegimg, read_image, read_manifest, write_image, write_manifest, write_png, ManifestEntry,
    EEGIMG_VERSION,
};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("segment of {segment_ms} ms at {rate_hz} Hz is not a whole number of samples")]
    NonIntegralSegment { segment_ms: f64, rate_hz: f64 },
    #[error("window block has {found} samples per channel, expected {expected}")]
    BlockLength { expected: usize, found: usize },
    #[error("block has no channels")]
    EmptyBlock,
    #[error("value {value} at ({row}, {col}) is outside [0, 1]")]
    ValueOutOfRange { row: usize, col: usize, value: f64 },
    #[error("image dimensions must be at least 1, got {height}x{width}")]
    ZeroDimension { height: usize, width: usize },
    #[error("color table must have 768 bytes, got {0}")]
    LutSize(usize),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("payload truncated: need {needed} bytes, got {got}")]
    TruncatedPayload { needed: usize, got: usize },
    #[error("{extra} unexpected bytes after payload")]
    TrailingGarbage { extra: usize },
    #[error("label {0} does not fit the image format")]
    LabelRange(u16),
    #[error("{field} too large for the image format: {value}")]
    FieldOverflow { field: &'static str, value: usize },
    #[error("source id is not valid UTF-8")]
    SourceIdEncoding,
    #[error("manifest line {line}: {source}")]
    Manifest { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Window(#[from] crate::ingest::IngestError),
    #[error("PNG encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

pub(crate) fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ImagingError {
    let path = path.into();
    move |source| ImagingError::Io { path, source }
}

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImagingError::ZeroDimension { height, width });
        }
        if pixels.len() != height * width * 3 {
            return Err(ImagingError::TruncatedPayload {
                needed: height * width * 3,
                got: pixels.len(),
            });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn iter_pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// An encoded window with its provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EegImage {
    pub image: RgbImage,
    pub label: Option<u16>,
    pub source_id: String,
    pub window_index: u32,
}
