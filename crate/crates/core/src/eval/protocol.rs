use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sslse_autodiff::Params;

use super::train::{confusion, predict, train_end_to_end, train_linear_probe};
use super::{compute_metrics, split_labeled, Condition, FinetuneConfig, LabeledSplit, Method, MetricsReport, Result};
use crate::imaging::{EegImage, RgbImage};
use crate::model::{embed, init_classifier, init_params, EncoderConfig};
use crate::ssl::{pretrain, EpochLog, PretrainConfig};

const EMBED_BATCH: usize = 64;

/// A trained model with its held-out score.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluated {
    /// Encoder parameters after training; for a frozen probe, the input
    /// set unchanged.
    pub encoder: Params<f32>,
    pub head: Params<f32>,
    pub report: MetricsReport,
    pub split: LabeledSplit,
}

fn label_options(images: &[&EegImage]) -> Vec<Option<u16>> {
    images.iter().map(|i| i.label).collect()
}

fn pick<'a>(images: &[&'a EegImage], idx: &[usize]) -> (Vec<&'a RgbImage>, Vec<usize>) {
    idx.iter()
        .map(|&i| {
            let img = images[i];
            (&img.image, usize::from(img.label.expect("split indices are labeled")))
        })
        .unzip()
}

fn score(
    encoder: &EncoderConfig,
    encoder_params: &Params<f32>,
    head: &Params<f32>,
    images: &[&EegImage],
    split: &LabeledSplit,
    condition: Condition,
    seed: u64,
) -> Result<MetricsReport> {
    let (held, truth) = pick(images, &split.held_out);
    let features = embed(encoder, encoder_params, &held, EMBED_BATCH)?;
    let predicted = predict(head, &features)?;
    let metrics = compute_metrics(&confusion(&truth, &predicted, encoder.num_classes)?)?;
    Ok(MetricsReport {
        condition,
        metrics,
        seed,
    })
}

fn encoder_only(params: &Params<f32>) -> Params<f32> {
    params.filtered(|n| n.starts_with("encoder."))
}

fn train_whole(
    encoder: &EncoderConfig,
    start: Params<f32>,
    images: &[&EegImage],
    split: &LabeledSplit,
    cfg: &FinetuneConfig,
    condition: Condition,
) -> Result<Evaluated> {
    let mut params = encoder_only(&start);
    params.extend(&init_classifier(encoder.embedding_dim, encoder.num_classes))?;
    let (train, labels) = pick(images, &split.train);
    let trained = train_end_to_end(
        encoder,
        &params,
        &train,
        &labels,
        cfg.supervised_epochs,
        cfg.supervised_learning_rate,
        cfg.batch_size,
        cfg.seed,
    )?;
    let head = trained.filtered(|n| n.starts_with("classifier."));
    let encoder_params = encoder_only(&trained);
    let report = score(encoder, &encoder_params, &head, images, split, condition, cfg.seed)?;
    Ok(Evaluated {
        encoder: encoder_params,
        head,
        report,
        split: split.clone(),
    })
}

fn finetune_on_split(
    encoder: &EncoderConfig,
    params: &Params<f32>,
    images: &[&EegImage],
    split: &LabeledSplit,
    cfg: &FinetuneConfig,
) -> Result<Evaluated> {
    let condition = Condition::new(Method::Ssl, encoder.se_enabled);
    if !cfg.freeze_encoder {
        return train_whole(encoder, params.clone(), images, split, cfg, condition);
    }
    let (train, labels) = pick(images, &split.train);
    let features = embed(encoder, params, &train, EMBED_BATCH)?;
    let head = train_linear_probe(
        &features,
        &labels,
        encoder.num_classes,
        cfg.epochs,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.seed,
    )?;
    let report = score(encoder, params, &head, images, split, condition, cfg.seed)?;
    Ok(Evaluated {
        encoder: params.clone(),
        head,
        report,
        split: split.clone(),
    })
}

/// Trains a classifier head on top of `params` using a labeled subset of
/// `images` and scores it on the held-out part of that subset.
///
/// With `cfg.freeze_encoder` the head is a linear probe on cached
/// embeddings and the encoder is never touched; otherwise encoder and head
/// are trained together on the supervised schedule.
pub fn finetune(
    encoder: &EncoderConfig,
    params: &Params<f32>,
    images: &[&EegImage],
    cfg: &FinetuneConfig,
) -> Result<Evaluated> {
    let split = split_labeled(&label_options(images), encoder.num_classes, cfg)?;
    finetune_on_split(encoder, params, images, &split, cfg)
}

/// The supervised baseline: the same encoder from random init (seeded by
/// `cfg.seed`) trained end-to-end with a linear head, without projection.
pub fn train_supervised(encoder: &EncoderConfig, images: &[&EegImage], cfg: &FinetuneConfig) -> Result<Evaluated> {
    let split = split_labeled(&label_options(images), encoder.num_classes, cfg)?;
    supervised_on_split(encoder, images, &split, cfg)
}

fn supervised_on_split(
    encoder: &EncoderConfig,
    images: &[&EegImage],
    split: &LabeledSplit,
    cfg: &FinetuneConfig,
) -> Result<Evaluated> {
    let start = init_params(encoder, cfg.seed)?;
    let condition = Condition::new(Method::Supervised, encoder.se_enabled);
    train_whole(encoder, start, images, split, cfg, condition)
}

/// Shared settings of every ablation cell.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

/// Effective settings of one cell; cells differ only in
/// `encoder.se_enabled` and whether `pretrain` is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub encoder: EncoderConfig,
    pub pretrain: Option<PretrainConfig>,
    pub finetune: FinetuneConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub config: CellConfig,
    pub report: MetricsReport,
    pub held_out: Vec<usize>,
    /// Mean contrastive loss per pretraining epoch; empty for supervised
    /// cells.
    pub pretrain_loss: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, condition: Condition) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.report.condition == condition)
    }

    /// Aligned plain-text table, one row per cell.
    pub fn table(&self) -> String {
        let mut out = format!("{:<18} {:>9} {:>9} {:>6}\n", "condition", "accuracy", "macro_f1", "n");
        for cell in &self.cells {
            let m = &cell.report.metrics;
            let _ = writeln!(
                out,
                "{:<18} {:>9.4} {:>9.4} {:>6}",
                cell.report.condition.to_string(),
                m.accuracy,
                m.macro_f1,
                m.n
            );
        }
        out
    }
}

/// The {SE on, SE off} × {pretrain + probe, supervised} grid.
///
/// All cells share one labeled split. Contrastive pretraining uses every
/// image outside the held-out set, with labels ignored, so no cell sees a
/// held-out image during training.
pub fn run_ablation(images: &[&EegImage], base: &AblationConfig) -> Result<AblationReport> {
    let split = split_labeled(&label_options(images), base.encoder.num_classes, &base.finetune)?;
    let held: BTreeSet<usize> = split.held_out.iter().copied().collect();
    let pool: Vec<&RgbImage> = images
        .iter()
        .enumerate()
        .filter(|(i, _)| !held.contains(i))
        .map(|(_, img)| &img.image)
        .collect();

    let mut ssl_cells = Vec::new();
    let mut supervised_cells = Vec::new();
    for se in [true, false] {
        let encoder = EncoderConfig {
            se_enabled: se,
            ..base.encoder.clone()
        };
        log::info!("ablation: pretraining with se_enabled={se} on {} images", pool.len());
        let (params, history) = pretrain(&pool, &encoder, &base.pretrain)?;
        let ssl = finetune_on_split(&encoder, &params, images, &split, &base.finetune)?;
        ssl_cells.push(AblationCell {
            config: CellConfig {
                encoder: encoder.clone(),
                pretrain: Some(base.pretrain.clone()),
                finetune: base.finetune.clone(),
            },
            report: ssl.report,
            held_out: ssl.split.held_out,
            pretrain_loss: history.iter().map(|h| h.mean_loss).collect(),
        });
        log::info!("ablation: supervised baseline with se_enabled={se}");
        let sup = supervised_on_split(&encoder, images, &split, &base.finetune)?;
        supervised_cells.push(AblationCell {
            config: CellConfig {
                encoder,
                pretrain: None,
                finetune: base.finetune.clone(),
            },
            report: sup.report,
            held_out: sup.split.held_out,
            pretrain_loss: Vec::new(),
        });
    }
    ssl_cells.extend(supervised_cells);
    Ok(AblationReport { cells: ssl_cells })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferOutcome {
    pub evaluated: Evaluated,
    pub history: Vec<EpochLog>,
}

/// Contrastive pretraining on `source` (labels unused), then fine-tuning
/// on a labeled budget of `target`. `encoder.num_classes` refers to the
/// target task.
pub fn run_transfer(
    source: &[&RgbImage],
    target: &[&EegImage],
    encoder: &EncoderConfig,
    pretrain_cfg: &PretrainConfig,
    finetune_cfg: &FinetuneConfig,
) -> Result<TransferOutcome> {
    let (params, history) = pretrain(source, encoder, pretrain_cfg)?;
    let evaluated = finetune(encoder, &params, target, finetune_cfg)?;
    Ok(TransferOutcome { evaluated, history })
}
