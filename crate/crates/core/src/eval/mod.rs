//! Downstream evaluation: linear probes on frozen embeddings, the
//! supervised baseline, metrics and the SE × pretraining ablation grid.

mod metrics;
mod protocol;
mod split;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};
pub use protocol::{
    finetune, run_ablation, run_transfer, train_supervised, AblationCell, AblationConfig, AblationReport, CellConfig,
    Evaluated, TransferOutcome,
};
pub use split::{split_labeled, LabeledSplit};
pub use train::{argmax, confusion, predict, train_end_to_end, train_linear_probe};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("confusion matrix rows must all have length equal to the row count")]
    NotSquare,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("image {index} has no label")]
    MissingLabels { index: usize },
    #[error("{split} split contains {classes} distinct class(es); at least 2 are required")]
    SingleClassSplit { split: &'static str, classes: usize },
    #[error("label budget {budget} exceeds dataset size {dataset}")]
    BudgetTooLarge { budget: usize, dataset: usize },
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("unknown condition tag {0:?}")]
    UnknownCondition(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Ssl(#[from] crate::ssl::SslError),
    #[error(transparent)]
    Autodiff(#[from] sslse_autodiff::AutodiffError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// How the encoder was trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Contrastive pretraining, then a probe on frozen embeddings.
    Ssl,
    /// End-to-end cross-entropy training from random init.
    Supervised,
}

/// Ablation cell tag, rendered as e.g. `ssl+se` or `supervised+no-se`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Condition {
    pub method: Method,
    pub se: bool,
}

impl Condition {
    pub const fn new(method: Method, se: bool) -> Self {
        Self { method, se }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let method = match self.method {
            Method::Ssl => "ssl",
            Method::Supervised => "supervised",
        };
        let se = if self.se { "se" } else { "no-se" };
        write!(f, "{method}+{se}")
    }
}

impl FromStr for Condition {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || EvalError::UnknownCondition(s.to_string());
        let (method, se) = s.split_once('+').ok_or_else(unknown)?;
        let method = match method {
            "ssl" => Method::Ssl,
            "supervised" => Method::Supervised,
            _ => return Err(unknown()),
        };
        let se = match se {
            "se" => true,
            "no-se" => false,
            _ => return Err(unknown()),
        };
        Ok(Self { method, se })
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Held-out metrics of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub condition: Condition,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub seed: u64,
}

/// Size of the labeled subset: an absolute count or a fraction of the
/// dataset, rounded to the nearest image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelBudget {
    Count(usize),
    Fraction(f64),
}

impl LabelBudget {
    pub fn resolve(self, dataset: usize) -> Result<usize> {
        let budget = match self {
            Self::Count(n) => n,
            Self::Fraction(f) if (0.0..=1.0).contains(&f) => (f * dataset as f64).round() as usize,
            Self::Fraction(f) => return Err(EvalError::InvalidConfig(format!("label fraction {f} outside [0, 1]"))),
        };
        if budget > dataset {
            return Err(EvalError::BudgetTooLarge { budget, dataset });
        }
        Ok(budget)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub labeled: LabelBudget,
    /// Share of the labeled subset held out for scoring.
    pub held_out_fraction: f64,
    /// Probe epochs over the labeled training split.
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Schedule of every run that updates the encoder: the supervised
    /// baseline and unfrozen fine-tuning.
    pub supervised_epochs: usize,
    pub supervised_learning_rate: f64,
    pub seed: u64,
    pub freeze_encoder: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            labeled: LabelBudget::Fraction(0.1),
            held_out_fraction: 0.2,
            epochs: 100,
            learning_rate: 1e-2,
            batch_size: 32,
            supervised_epochs: 20,
            supervised_learning_rate: 1e-3,
            seed: 0,
            freeze_encoder: true,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.held_out_fraction > 0.0 && self.held_out_fraction < 1.0) {
            return Err(EvalError::InvalidConfig(format!(
                "held-out fraction {} must lie strictly between 0 and 1",
                self.held_out_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(EvalError::InvalidConfig("batch_size must be at least 1".into()));
        }
        for lr in [self.learning_rate, self.supervised_learning_rate] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(EvalError::InvalidConfig(format!("learning rate {lr} must be positive")));
            }
        }
        if let LabelBudget::Fraction(f) = self.labeled {
            if !(0.0..=1.0).contains(&f) {
                return Err(EvalError::InvalidConfig(format!("label fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}
