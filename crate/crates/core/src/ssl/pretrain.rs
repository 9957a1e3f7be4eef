use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sslse_autodiff::{Adam, AdamConfig, Params, Tape, Tensor};

use super::{augment_pair, nt_xent_loss, AugmentationSpec, Result, SslError};
use crate::imaging::RgbImage;
use crate::model::{encoder_forward, init_params, project, EncoderConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Source images per batch; each contributes two views.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub seed: u64,
    pub augmentation: AugmentationSpec,
    /// Epochs between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-4,
            temperature: 0.5,
            seed: 0,
            augmentation: AugmentationSpec::default(),
            checkpoint_every: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SslError::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SslError::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SslError::NonPositiveTemperature(self.temperature));
        }
        self.augmentation.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// One line of the loss history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

/// Everything needed to continue pretraining exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainState {
    pub params: Params<f32>,
    pub adam: Adam<f32>,
    /// Completed epochs.
    pub epoch: u32,
    /// Seed of the next epoch's shuffle and augmentation streams.
    pub rng_seed: [u8; 32],
}

impl PretrainState {
    pub fn fresh(encoder: &EncoderConfig, cfg: &PretrainConfig) -> Result<Self> {
        let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
        seeder.set_stream(1);
        Ok(Self {
            params: init_params(encoder, cfg.seed)?,
            adam: Adam::new(cfg.adam()),
            epoch: 0,
            rng_seed: seeder.random(),
        })
    }
}

/// Contrastive pretraining of the encoder and projection head.
pub struct Pretrainer {
    pub encoder: EncoderConfig,
    pub config: PretrainConfig,
    pub state: PretrainState,
}

impl Pretrainer {
    pub fn new(encoder: EncoderConfig, config: PretrainConfig) -> Result<Self> {
        config.validate()?;
        let state = PretrainState::fresh(&encoder, &config)?;
        Ok(Self { encoder, config, state })
    }

    pub fn resume(encoder: EncoderConfig, config: PretrainConfig, state: PretrainState) -> Result<Self> {
        config.validate()?;
        encoder.validate()?;
        Ok(Self { encoder, config, state })
    }

    pub fn finished(&self) -> bool {
        self.state.epoch as usize >= self.config.epochs
    }

    /// One pass over `dataset` in a seeded order; a trailing partial batch
    /// is skipped.
    pub fn run_epoch(&mut self, dataset: &[&RgbImage]) -> Result<EpochLog> {
        let start = Instant::now();
        let n = self.config.batch_size;
        if dataset.is_empty() {
            return Err(SslError::EmptyDataset);
        }
        if dataset.len() < n {
            return Err(SslError::BatchLargerThanDataset {
                batch: n,
                dataset: dataset.len(),
            });
        }
        if n == 1 {
            log::warn!("batch size 1 has no negatives; the contrastive loss is identically 0");
        }

        let epoch_seed = self.state.rng_seed;
        let mut rng = ChaCha8Rng::from_seed(epoch_seed);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let next_seed: [u8; 32] = rng.random();

        let mut losses = Vec::with_capacity(dataset.len() / n);
        for batch in order.chunks_exact(n) {
            let views = batch_views(dataset, batch, &self.config.augmentation, epoch_seed);
            losses.push(self.step(views)?);
        }

        self.state.epoch += 1;
        self.state.rng_seed = next_seed;
        Ok(EpochLog {
            epoch: self.state.epoch as usize,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        })
    }

    fn step(&mut self, views: Tensor<f32>) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.state.params.bind(&mut tape, true);
        let x = tape.constant(views);
        let h = encoder_forward(&mut tape, &bound, &self.encoder, x)?;
        let z = project(&mut tape, &bound, h)?;
        let loss = nt_xent_loss(&mut tape, z, self.config.temperature)?;
        tape.backward(loss)?;
        let grads = bound.gradients(&tape);
        self.state.adam.step(&mut self.state.params, &grads)?;
        Ok(f64::from(tape.value(loss).item()))
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(&mut self, dataset: &[&RgbImage], mut on_epoch: impl FnMut(&Self, &EpochLog)) -> Result<Vec<EpochLog>> {
        let mut history = Vec::new();
        while !self.finished() {
            let log = self.run_epoch(dataset)?;
            on_epoch(self, &log);
            history.push(log);
        }
        Ok(history)
    }
}

/// Views for one batch, laid out so rows `2k` and `2k + 1` come from the
/// `k`-th image. Each image's augmentation stream depends only on the
/// epoch seed and its dataset index.
fn batch_views(dataset: &[&RgbImage], batch: &[usize], spec: &AugmentationSpec, epoch_seed: [u8; 32]) -> Tensor<f32> {
    let pairs: Vec<_> = batch
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::from_seed(epoch_seed);
            rng.set_stream(i as u64 + 1);
            augment_pair(dataset[i], spec, &mut rng)
        })
        .collect();
    let (h, w) = (pairs[0].0.height(), pairs[0].0.width());
    let mut data = Vec::with_capacity(batch.len() * 2 * 3 * h * w);
    for (a, b) in &pairs {
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
    }
    Tensor::new(vec![2 * batch.len(), 3, h, w], data).expect("views share the source size")
}

/// Trains from scratch and returns the final parameters with the loss
/// history.
pub fn pretrain(dataset: &[&RgbImage], encoder: &EncoderConfig, cfg: &PretrainConfig) -> Result<(Params<f32>, Vec<EpochLog>)> {
    let mut trainer = Pretrainer::new(encoder.clone(), cfg.clone())?;
    let history = trainer.run(dataset, |_, _| {})?;
    Ok((trainer.state.params, history))
}
