//! Loading recordings and images as described by a [`RunConfig`].

use std::path::Path;

use sslse_core::imaging::{encode_recording, read_image, read_manifest, ColorLut, EegImage, ImageEncoder};
use sslse_core::ingest::{parse_csv, parse_edf, synthesize_recording, EegRecording, WindowLabels};

use crate::config::{ImagingConfig, IngestConfig, RunConfig};
use crate::error::{io_error, CliError, Result};

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

fn read_labels(path: &Path) -> Result<WindowLabels> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// The recording named by `ingest`: a file, or the synthetic generator.
pub fn load_recording(ingest: &IngestConfig) -> Result<EegRecording> {
    let Some(source) = &ingest.source else {
        return Ok(synthesize_recording(&ingest.synth.clone().unwrap_or_default())?);
    };
    let rec = match extension(source).as_str() {
        "edf" => parse_edf(&std::fs::read(source).map_err(io_error(source))?)?,
        "csv" => {
            let rate = ingest.sample_rate_hz.ok_or_else(|| {
                CliError::InvalidConfig("ingest.sample_rate_hz is required for CSV sources".into())
            })?;
            parse_csv(&std::fs::read_to_string(source).map_err(io_error(source))?, rate)?
        }
        other => {
            return Err(CliError::InvalidConfig(format!(
                "unsupported recording format {other:?} for {}",
                source.display()
            )))
        }
    };
    match &ingest.labels {
        Some(path) => Ok(rec.with_labels(read_labels(path)?)?),
        None => Ok(rec),
    }
}

pub fn image_encoder(imaging: &ImagingConfig) -> Result<ImageEncoder> {
    Ok(ImageEncoder {
        lut: ColorLut::named(&imaging.lut)?,
        resize: imaging.resize_mode,
        height: imaging.height,
        width: imaging.width,
    })
}

/// Images for training: decoded from an `encode` manifest (`.jsonl`
/// source) or encoded in memory from the recording.
pub fn load_images(cfg: &RunConfig) -> Result<Vec<EegImage>> {
    if let Some(source) = &cfg.ingest.source {
        if extension(source) == "jsonl" {
            if !source.exists() {
                return Err(CliError::MissingInput(source.clone()));
            }
            let dir = source.parent().unwrap_or_else(|| Path::new("."));
            return read_manifest(source)?
                .iter()
                .map(|e| Ok(read_image(&dir.join(&e.file))?))
                .collect();
        }
    }
    let rec = load_recording(&cfg.ingest)?;
    Ok(encode_recording(&rec, &cfg.window, &image_encoder(&cfg.imaging)?)?)
}
