//! One function per subcommand. Each creates its own run directory under
//! `root`, echoes the effective config there and returns a short summary.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sslse_autodiff::Params;
use sslse_core::eval::{finetune, run_ablation, run_transfer, AblationConfig, MetricsReport};
use sslse_core::imaging::{write_image, write_manifest, write_png, EegImage, ManifestEntry, RgbImage};
use sslse_core::ingest::{synthesize_recording, write_edf};
use sslse_core::model::init_params;
use sslse_core::ssl::Pretrainer;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{load_images, load_recording};
use crate::error::{io_error, CliError, Result};
use crate::run::RunDir;

/// What a command produced.
#[derive(Debug)]
pub struct Outcome {
    pub run_dir: PathBuf,
    /// Human-readable, for standard error.
    pub summary: String,
}

fn start(root: &Path, command: &str, cfg: &RunConfig) -> Result<RunDir> {
    cfg.validate()?;
    let run = RunDir::create(root, command)?;
    run.write_config("config.toml", cfg)?;
    Ok(run)
}

fn finish(run: RunDir, summary: String) -> Outcome {
    run.event("run_finished", json!({ "summary": summary }));
    Outcome {
        run_dir: run.path().to_path_buf(),
        summary,
    }
}

/// Writes the synthetic recording as EDF plus its window labels.
pub fn cmd_synth(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let run = start(root, "synth", cfg)?;
    let spec = cfg.ingest.synth.clone().unwrap_or_default();
    let rec = synthesize_recording(&spec)?;
    let edf = write_edf(&rec)?;
    let edf_path = run.join("recording.edf");
    std::fs::write(&edf_path, edf).map_err(io_error(&edf_path))?;
    let labels = rec.labels().expect("synthetic recordings are labeled");
    run.write_json("labels.json", labels)?;
    run.write_json(
        "manifest.json",
        &json!({
            "recording": "recording.edf",
            "labels": "labels.json",
            "sample_rate_hz": rec.sample_rate_hz(),
            "channels": rec.channels(),
            "duration_s": rec.duration_s(),
            "windows": labels.classes.len(),
            "classes": labels.num_classes,
        }),
    )?;
    let summary = format!(
        "synthesized {} windows ({} classes, {:.0} s at {} Hz) into {}",
        labels.classes.len(),
        labels.num_classes,
        rec.duration_s(),
        rec.sample_rate_hz(),
        run.path().display()
    );
    Ok(finish(run, summary))
}

/// Encodes every window into an `.eegimg` file plus a JSON-lines manifest.
pub fn cmd_encode(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let run = start(root, "encode", cfg)?;
    let rec = load_recording(&cfg.ingest)?;
    let images = sslse_core::imaging::encode_recording(&rec, &cfg.window, &crate::data::image_encoder(&cfg.imaging)?)?;
    let out_dir = cfg.imaging.out_dir.clone().unwrap_or_else(|| run.join("images"));
    std::fs::create_dir_all(&out_dir).map_err(io_error(&out_dir))?;
    let manifest = out_dir.join("manifest.jsonl");
    if manifest.exists() {
        return Err(CliError::InvalidConfig(format!(
            "{} already holds a manifest; choose another imaging.out_dir",
            out_dir.display()
        )));
    }
    let mut entries = Vec::with_capacity(images.len());
    for img in &images {
        let file = format!("{:06}.eegimg", img.window_index);
        write_image(&out_dir.join(&file), img)?;
        if cfg.imaging.png {
            write_png(&out_dir.join(format!("{:06}.png", img.window_index)), &img.image)?;
        }
        entries.push(ManifestEntry {
            file,
            label: img.label,
            source_id: img.source_id.clone(),
            window_index: img.window_index,
        });
    }
    write_manifest(&manifest, &entries)?;
    run.event("encoded", json!({ "images": images.len(), "manifest": manifest }));
    let summary = format!("encoded {} images into {}", images.len(), out_dir.display());
    Ok(finish(run, summary))
}

#[derive(Serialize)]
struct LossPoint {
    epoch: usize,
    mean_loss: f64,
}

fn effective_json(cfg: &RunConfig) -> String {
    serde_json::to_string(cfg).expect("run config serializes to JSON")
}

fn rgb(images: &[EegImage]) -> Vec<&RgbImage> {
    images.iter().map(|i| &i.image).collect()
}

/// Contrastive pretraining; with `resume`, continues from a checkpoint up
/// to `ssl.epochs`. Writes `checkpoint.ssee` and `loss_history.json`
/// (epochs run by this invocation only).
pub fn cmd_pretrain(cfg: &RunConfig, root: &Path, resume: Option<&Path>) -> Result<Outcome> {
    let run = start(root, "pretrain", cfg)?;
    let images = load_images(cfg)?;
    let mut trainer = match resume {
        None => Pretrainer::new(cfg.model.clone(), cfg.ssl.clone())?,
        Some(path) => {
            if !path.exists() {
                return Err(CliError::MissingInput(path.to_path_buf()));
            }
            let ckpt = Checkpoint::load(path, cfg.ssl.adam())?;
            check_model(&ckpt, cfg)?;
            run.event("resumed", json!({ "checkpoint": path, "epoch": ckpt.state.epoch }));
            Pretrainer::resume(cfg.model.clone(), cfg.ssl.clone(), ckpt.state)?
        }
    };
    let refs = rgb(&images);
    let config_json = effective_json(cfg);
    let every = cfg.ssl.checkpoint_every;
    let mut save_error = None;
    let history = trainer.run(&refs, |t, log| {
        run.event(
            "epoch",
            json!({ "epoch": log.epoch, "mean_loss": log.mean_loss, "wall_ms": log.wall_ms }),
        );
        if every > 0 && log.epoch % every == 0 && save_error.is_none() {
            let dir = run.join("checkpoints");
            let result = std::fs::create_dir_all(&dir).map_err(io_error(&dir)).and_then(|_| {
                let ckpt = Checkpoint {
                    config_json: config_json.clone(),
                    state: t.state.clone(),
                };
                Ok(ckpt.save(&dir.join(format!("epoch-{:04}.ssee", log.epoch)))?)
            });
            save_error = result.err();
        }
    })?;
    if let Some(e) = save_error {
        return Err(e);
    }
    let ckpt = Checkpoint {
        config_json,
        state: trainer.state,
    };
    ckpt.save(&run.join("checkpoint.ssee"))?;
    let points: Vec<LossPoint> = history
        .iter()
        .map(|h| LossPoint {
            epoch: h.epoch,
            mean_loss: h.mean_loss,
        })
        .collect();
    run.write_json("loss_history.json", &points)?;
    let last = history.last().map_or(f64::NAN, |h| h.mean_loss);
    let summary = format!(
        "pretrained {} epochs on {} images (now at epoch {}), final loss {last:.4}; checkpoint {}",
        history.len(),
        images.len(),
        ckpt.state.epoch,
        run.join("checkpoint.ssee").display()
    );
    Ok(finish(run, summary))
}

fn check_model(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<()> {
    let saved: RunConfig = serde_json::from_str(&ckpt.config_json)
        .map_err(|e| CliError::InvalidConfig(format!("checkpoint config is unreadable: {e}")))?;
    let (mut a, mut b) = (saved.model, cfg.model.clone());
    // The head size does not affect the pretrained tensors.
    a.num_classes = 0;
    b.num_classes = 0;
    if a != b {
        return Err(CliError::InvalidConfig(
            "checkpoint was trained with a different model configuration".into(),
        ));
    }
    Ok(())
}

fn encoder_params(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Params<f32>> {
    match checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::MissingInput(path.to_path_buf()));
            }
            let ckpt = Checkpoint::load(path, cfg.ssl.adam())?;
            check_model(&ckpt, cfg)?;
            Ok(ckpt.state.params)
        }
        None => Ok(init_params(&cfg.model, cfg.seed)?),
    }
}

fn metrics_summary(r: &MetricsReport) -> String {
    format!(
        "{}: accuracy {:.4}, macro F1 {:.4} on {} held-out images",
        r.condition, r.metrics.accuracy, r.metrics.macro_f1, r.metrics.n
    )
}

/// Fine-tunes a head on the labeled budget and writes `metrics.json`.
/// Without a checkpoint the encoder is freshly initialized from `seed`.
pub fn cmd_finetune(cfg: &RunConfig, root: &Path, checkpoint: Option<&Path>) -> Result<Outcome> {
    let run = start(root, "finetune", cfg)?;
    let params = encoder_params(cfg, checkpoint)?;
    let images = load_images(cfg)?;
    let refs: Vec<&EegImage> = images.iter().collect();
    let out = finetune(&cfg.model, &params, &refs, &cfg.eval)?;
    run.write_json("metrics.json", &out.report)?;
    run.write_json("split.json", &out.split)?;
    run.event("metrics", serde_json::to_value(&out.report).expect("report serializes"));
    let summary = metrics_summary(&out.report);
    Ok(finish(run, summary))
}

/// The 2 × 2 SE / pretraining grid. Writes `ablation.json` (cells with
/// their effective configs), `metrics.json` (the four reports) and
/// `ablation.txt` (aligned table).
pub fn cmd_ablate(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let run = start(root, "ablate", cfg)?;
    let images = load_images(cfg)?;
    let refs: Vec<&EegImage> = images.iter().collect();
    let base = AblationConfig {
        encoder: cfg.model.clone(),
        pretrain: cfg.ssl.clone(),
        finetune: cfg.eval.clone(),
    };
    let report = run_ablation(&refs, &base)?;
    for cell in &report.cells {
        run.event("metrics", serde_json::to_value(&cell.report).expect("report serializes"));
    }
    let reports: Vec<&MetricsReport> = report.cells.iter().map(|c| &c.report).collect();
    run.write_json("metrics.json", &reports)?;
    run.write_json("ablation.json", &report)?;
    let table = report.table();
    run.write_text("ablation.txt", &table)?;
    Ok(finish(run, table))
}

/// Pretrains with `source`'s data, model and `ssl` settings, then
/// fine-tunes on `target`'s data with its `eval` settings. The head size
/// follows `target.model.num_classes`.
pub fn cmd_transfer(source: &RunConfig, target: &RunConfig, root: &Path) -> Result<Outcome> {
    target.validate()?;
    let run = start(root, "transfer", source)?;
    run.write_config("target.toml", target)?;
    let source_images = load_images(source)?;
    let target_images = load_images(target)?;
    let mut encoder = source.model.clone();
    encoder.num_classes = target.model.num_classes;
    let target_refs: Vec<&EegImage> = target_images.iter().collect();
    let out = run_transfer(&rgb(&source_images), &target_refs, &encoder, &source.ssl, &target.eval)?;
    for h in &out.history {
        run.event("epoch", json!({ "epoch": h.epoch, "mean_loss": h.mean_loss, "wall_ms": h.wall_ms }));
    }
    run.write_json("metrics.json", &out.evaluated.report)?;
    run.write_json("split.json", &out.evaluated.split)?;
    let summary = format!(
        "pretrained on {} source images, fine-tuned on {} of {} target images; {}",
        source_images.len(),
        out.evaluated.split.train.len(),
        target_images.len(),
        metrics_summary(&out.evaluated.report)
    );
    Ok(finish(run, summary))
}
