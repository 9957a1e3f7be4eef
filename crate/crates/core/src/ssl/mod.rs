//! Contrastive pretraining: paired augmentations, the NT-Xent objective and
//! the training loop.

mod augment;
mod loss;
mod pretrain;

use thiserror::Error;

pub use augment::{augment, augment_pair, AugmentOp, AugmentationSpec, View};
pub use loss::{nt_xent_loss, positive_index, UNIT_TOLERANCE};
pub use pretrain::{pretrain, EpochLog, PretrainConfig, PretrainState, Pretrainer};

#[derive(Debug, Error)]
pub enum SslError {
    #[error("row {row} has norm {norm}, expected 1")]
    NonUnitRows { row: usize, norm: f64 },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("contrastive batch needs an even, non-zero row count, got {0}")]
    OddRowCount(usize),
    #[error("embeddings must be a matrix, got shape {0:?}")]
    EmbeddingShape(Vec<usize>),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch size {batch} exceeds dataset size {dataset}")]
    BatchLargerThanDataset { batch: usize, dataset: usize },
    #[error("invalid augmentation: {0}")]
    InvalidAugmentation(String),
    #[error("invalid pretraining config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Autodiff(#[from] sslse_autodiff::AutodiffError),
}

pub type Result<T> = std::result::Result<T, SslError>;
