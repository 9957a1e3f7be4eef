//! Strict, versioned TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sslse_core::eval::FinetuneConfig;
use sslse_core::imaging::ResizeMode;
use sslse_core::ingest::{SynthSpec, WindowSpec};
use sslse_core::model::EncoderConfig;
use sslse_core::ssl::PretrainConfig;

use crate::error::{io_error, CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Where recordings come from: a file or the synthetic generator.
///
/// `source` may be an EDF (`.edf`), a CSV (`.csv`, needs
/// `sample_rate_hz`) or an image manifest (`.jsonl`) written by `encode`.
/// `labels` optionally points to window labels (JSON) for EDF and CSV
/// sources. Without `source` the `synth` table (or its defaults) is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub source: Option<PathBuf>,
    pub sample_rate_hz: Option<f64>,
    pub labels: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    /// `viridis`, `grayscale` or a path to a 768-byte RGB table.
    pub lut: String,
    pub resize_mode: ResizeMode,
    pub height: usize,
    pub width: usize,
    /// Destination of `encode`; defaults to `images/` in the run directory.
    pub out_dir: Option<PathBuf>,
    /// Also write a PNG next to every `.eegimg`.
    pub png: bool,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            lut: "viridis".into(),
            resize_mode: ResizeMode::Nearest,
            height: 224,
            width: 224,
            out_dir: None,
            png: false,
        }
    }
}

/// The top-level `seed` drives model init, pretraining and fine-tuning:
/// it replaces `ssl.seed` and `eval.seed` in the effective config. The
/// synthetic generator keeps its own `ingest.synth.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub imaging: ImagingConfig,
    #[serde(default)]
    pub model: EncoderConfig,
    #[serde(default)]
    pub ssl: PretrainConfig,
    #[serde(default)]
    pub eval: FinetuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            ingest: IngestConfig {
                synth: Some(SynthSpec::default()),
                ..IngestConfig::default()
            },
            window: WindowSpec::default(),
            imaging: ImagingConfig::default(),
            model: EncoderConfig::default(),
            ssl: PretrainConfig::default(),
            eval: FinetuneConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub se_enabled: Option<bool>,
}

impl RunConfig {
    /// Reads, version-checks and strictly parses `path`. Relative paths
    /// inside the file are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// `origin` only labels errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let parse_error = |message: String| CliError::ConfigParse {
            path: origin.to_path_buf(),
            message,
        };
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error(e.to_string()))?;
        match table.get("schema_version") {
            None => return Err(parse_error("missing key `schema_version`".into())),
            Some(toml::Value::Integer(v)) if *v == i64::from(SCHEMA_VERSION) => {}
            Some(toml::Value::Integer(v)) => {
                return Err(CliError::SchemaVersionMismatch {
                    path: origin.to_path_buf(),
                    found: *v,
                    expected: SCHEMA_VERSION,
                })
            }
            Some(other) => return Err(parse_error(format!("`schema_version` must be an integer, got {other}"))),
        }
        let mut cfg: Self = toml::from_str(text).map_err(|e| parse_error(e.to_string()))?;
        cfg.materialize_source();
        cfg.sync_seeds();
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        resolve(&mut self.ingest.source);
        resolve(&mut self.ingest.labels);
        resolve(&mut self.imaging.out_dir);
        let lut = Path::new(&self.imaging.lut);
        if !matches!(self.imaging.lut.as_str(), "viridis" | "grayscale" | "gray") && lut.is_relative() {
            self.imaging.lut = base.join(lut).to_string_lossy().into_owned();
        }
    }

    /// Fills in the synthetic source when no source is named, so the
    /// echoed config states exactly which data was used.
    fn materialize_source(&mut self) {
        if self.ingest.source.is_none() && self.ingest.synth.is_none() {
            self.ingest.synth = Some(SynthSpec::default());
        }
    }

    fn sync_seeds(&mut self) {
        self.ssl.seed = self.seed;
        self.eval.seed = self.seed;
    }

    /// `epochs` applies to contrastive pretraining.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(epochs) = o.epochs {
            self.ssl.epochs = epochs;
        }
        if let Some(se) = o.se_enabled {
            self.model.se_enabled = se;
        }
        self.sync_seeds();
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: &dyn std::fmt::Display| CliError::InvalidConfig(e.to_string());
        if self.ingest.source.is_some() && self.ingest.synth.is_some() {
            return Err(CliError::InvalidConfig(
                "ingest.source and ingest.synth are mutually exclusive".into(),
            ));
        }
        self.window.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.ssl.validate().map_err(|e| invalid(&e))?;
        self.eval.validate().map_err(|e| invalid(&e))?;
        if let Some(spec) = &self.ingest.synth {
            spec.validate().map_err(|e| invalid(&e))?;
        }
        if self.imaging.height == 0 || self.imaging.width == 0 {
            return Err(CliError::InvalidConfig("image height and width must be positive".into()));
        }
        Ok(())
    }

    /// The effective config as TOML, re-loadable by [`RunConfig::parse`].
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}
