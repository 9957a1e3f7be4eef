//! Binary checkpoint of a pretraining run.
//!
//! Layout, all integers little-endian:
//! `"SSEE"` | version u16 | config length u32 + UTF-8 JSON |
//! tensor count u32 + tensors | optimizer tensor count u32 + tensors |
//! epoch u32 | RNG seed (32 bytes).
//!
//! A tensor is: name length u16 + UTF-8 name | dtype u8 (0 = f32,
//! 1 = f64) | rank u8 | dims u32 each | raw data. The optimizer block
//! holds the step counter as the f64 scalar `step`, then first moments
//! `m.<param>` and second moments `v.<param>`.

use std::path::Path;

use sslse_autodiff::{Adam, AdamConfig, Params, Tensor};
use sslse_core::ssl::PretrainState;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SSEE";
pub const VERSION: u16 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after the checkpoint")]
    TrailingBytes(usize),
    #[error("tensor {name}: unsupported dtype tag {tag}")]
    Dtype { name: String, tag: u8 },
    #[error("tensor {0}: unexpected dtype for this slot")]
    WrongDtype(String),
    #[error("checkpoint text field is not UTF-8")]
    Utf8,
    #[error("optimizer state lacks the step counter")]
    MissingStep,
    #[error("{0} does not fit the checkpoint field")]
    FieldOverflow(&'static str),
    #[error(transparent)]
    Autodiff(#[from] sslse_autodiff::AutodiffError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// A pretraining state together with the effective config (JSON) that
/// produced it. The config text is stored verbatim, so decoding and
/// re-encoding yields the same bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub state: PretrainState,
}

enum Stored {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len_u32(&mut self, n: usize, what: &'static str) -> Result<()> {
        self.u32(u32::try_from(n).map_err(|_| CheckpointError::FieldOverflow(what))?);
        Ok(())
    }

    fn tensor(&mut self, name: &str, t: &Stored) -> Result<()> {
        let bytes = name.as_bytes();
        self.u16(u16::try_from(bytes.len()).map_err(|_| CheckpointError::FieldOverflow("tensor name"))?);
        self.0.extend_from_slice(bytes);
        let shape = match t {
            Stored::F32(t) => t.shape(),
            Stored::F64(t) => t.shape(),
        };
        self.u8(if matches!(t, Stored::F32(_)) { DTYPE_F32 } else { DTYPE_F64 });
        self.u8(u8::try_from(shape.len()).map_err(|_| CheckpointError::FieldOverflow("tensor rank"))?);
        for &d in shape {
            self.len_u32(d, "tensor dimension")?;
        }
        match t {
            Stored::F32(t) => t.data().iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes())),
            Stored::F64(t) => t.data().iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes())),
        }
        Ok(())
    }

    fn params(&mut self, entries: &[(String, Stored)]) -> Result<()> {
        self.len_u32(entries.len(), "tensor count")?;
        entries.iter().try_for_each(|(n, t)| self.tensor(n, t))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("take returns N bytes"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn text(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CheckpointError::Utf8)
    }

    fn tensor(&mut self) -> Result<(String, Stored)> {
        let len = usize::from(self.u16()?);
        let name = self.text(len)?;
        let tag = self.u8()?;
        let rank = usize::from(self.u8()?);
        let shape = (0..rank).map(|_| Ok(self.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let t = match tag {
            DTYPE_F32 => {
                let raw = self.take(count.checked_mul(4).ok_or(CheckpointError::Truncated(self.pos))?)?;
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Stored::F32(Tensor::new(shape, data)?)
            }
            DTYPE_F64 => {
                let raw = self.take(count.checked_mul(8).ok_or(CheckpointError::Truncated(self.pos))?)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Stored::F64(Tensor::new(shape, data)?)
            }
            tag => return Err(CheckpointError::Dtype { name, tag }),
        };
        Ok((name, t))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Stored)>> {
        let n = self.u32()?;
        (0..n).map(|_| self.tensor()).collect()
    }
}

fn f32_params(entries: Vec<(String, Stored)>) -> Result<Params<f32>> {
    let mut p = Params::new();
    for (name, t) in entries {
        match t {
            Stored::F32(t) => p.insert(name, t)?,
            Stored::F64(_) => return Err(CheckpointError::WrongDtype(name)),
        }
    }
    Ok(p)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&MAGIC);
        w.u16(VERSION);
        w.len_u32(self.config_json.len(), "config length")?;
        w.0.extend_from_slice(self.config_json.as_bytes());

        let stored = |p: &Params<f32>, prefix: &str| -> Vec<(String, Stored)> {
            p.iter().map(|(n, t)| (format!("{prefix}{n}"), Stored::F32(t.clone()))).collect()
        };
        w.params(&stored(&self.state.params, ""))?;

        let adam = &self.state.adam;
        let mut optimizer = vec![(
            "step".to_string(),
            Stored::F64(Tensor::scalar(adam.step_count() as f64)),
        )];
        optimizer.extend(stored(adam.first_moments(), "m."));
        optimizer.extend(stored(adam.second_moments(), "v."));
        w.params(&optimizer)?;

        w.u32(self.state.epoch);
        w.0.extend_from_slice(&self.state.rng_seed);
        Ok(w.0)
    }

    /// `adam` supplies the optimizer hyperparameters, which are part of the
    /// config rather than the state.
    pub fn from_bytes(bytes: &[u8], adam: AdamConfig) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.array()?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let config_len = r.u32()? as usize;
        let config_json = r.text(config_len)?;
        let params = f32_params(r.tensors()?)?;

        let mut step = None;
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for (name, t) in r.tensors()? {
            match (name.as_str(), t) {
                ("step", Stored::F64(t)) => step = Some(t.item() as u64),
                (n, t) if n.starts_with("m.") => first.push((n[2..].to_string(), t)),
                (n, t) if n.starts_with("v.") => second.push((n[2..].to_string(), t)),
                _ => return Err(CheckpointError::WrongDtype(name)),
            }
        }
        let step = step.ok_or(CheckpointError::MissingStep)?;
        let adam = Adam::from_state(adam, step, f32_params(first)?, f32_params(second)?);

        let epoch = r.u32()?;
        let rng_seed: [u8; 32] = r.array()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self {
            config_json,
            state: PretrainState {
                params,
                adam,
                epoch,
                rng_seed,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path, adam: AdamConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sslse_core::model::EncoderConfig;
    use sslse_core::ssl::PretrainConfig;

    fn sample() -> Checkpoint {
        let mut state = PretrainState::fresh(&EncoderConfig::tiny(), &PretrainConfig::default()).unwrap();
        let grads: Params<f32> = state
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.map(|v| v * 0.5 + 0.01)))
            .fold(Params::new(), |mut p, (n, t)| {
                p.insert(n, t).unwrap();
                p
            });
        state.adam.step(&mut state.params, &grads).unwrap();
        state.epoch = 3;
        Checkpoint {
            config_json: r#"{"seed":0}"#.into(),
            state,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, PretrainConfig::default().adam()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(&bytes[..6], b"SSEE\x01\x00");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let adam = PretrainConfig::default().adam();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, adam), Err(CheckpointError::BadMagic(_))));
        let mut old = bytes.clone();
        old[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&old, adam), Err(CheckpointError::VersionMismatch { found: 9, .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1], adam),
            Err(CheckpointError::Truncated(_))
        ));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long, adam), Err(CheckpointError::TrailingBytes(1))));
    }
}
