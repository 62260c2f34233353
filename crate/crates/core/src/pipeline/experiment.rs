use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Split};
use super::dataset::{check_columns, load_samples, load_split};
use super::{write_csv, write_json};
use crate::error::{Error, Result};
use crate::model::{ablate, evaluate, train_with_progress, AblationRow, Bgnn, Checkpoint, EpochRecord, GraphSample};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Variant and head count, e.g. `vanilla/4-head`.
    pub model: String,
    pub feature_mask: Vec<usize>,
    pub parameter_count: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub final_val_acc: f64,
    /// Inference-mode accuracies of the restored best-validation parameters.
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub patches: [usize; 3],
}

#[derive(Serialize)]
struct MetricsRow {
    epoch: usize,
    lr: f64,
    loss: f64,
    train_acc: f64,
    train_eval_acc: Option<f64>,
    val_acc: f64,
}

fn metrics_rows(history: &[EpochRecord]) -> impl Iterator<Item = MetricsRow> + '_ {
    history.iter().map(|r| MetricsRow {
        epoch: r.epoch,
        lr: r.lr,
        loss: r.loss,
        train_acc: r.train_acc,
        train_eval_acc: r.train_eval_acc,
        val_acc: r.val_acc,
    })
}

/// Trains the configured model, keeps the best-validation parameters and
/// writes `metrics.csv`, `report.json` and `checkpoint.json` to `out`.
pub fn cmd_train(
    cfg: &PipelineConfig,
    dataset: &Path,
    out: &Path,
    progress: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    let [tr, va, te] = load_samples(dataset, &cfg.model.feature_mask)?;
    let mut model = Bgnn::new(cfg.model.clone())?;
    let report = train_with_progress(&mut model, &tr, &va, &cfg.train, progress)?;
    let bs = cfg.train.batch_size;
    let summary = TrainSummary {
        model: cfg.model.label(),
        feature_mask: cfg.model.feature_mask.clone(),
        parameter_count: model.parameter_count(),
        epochs: cfg.train.epochs,
        best_epoch: report.best_epoch,
        best_val_acc: report.best_val_acc,
        final_val_acc: report.final_val_acc,
        train_acc: evaluate(&model, &tr, bs)?,
        val_acc: evaluate(&model, &va, bs)?,
        test_acc: evaluate(&model, &te, bs)?,
        patches: [tr.len(), va.len(), te.len()],
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_csv(&out.join("metrics.csv"), metrics_rows(&report.history))?;
    write_json(&out.join(REPORT_FILE), &summary)?;
    Checkpoint::new(&model, report.optimizer.clone(), Some(cfg.train.clone()), report.best_epoch)
        .save(&out.join(CHECKPOINT_FILE))?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model: String,
    pub split: Split,
    pub patches: usize,
    pub accuracy: f64,
}

pub fn cmd_eval(checkpoint: &Path, dataset: &Path, split: Split, batch_size: usize) -> Result<EvalSummary> {
    let model = Checkpoint::load(checkpoint)?.restore()?;
    check_columns(dataset, &model.config().feature_mask)?;
    let samples: Vec<GraphSample> = load_split(dataset, split)?.into_iter().map(|r| r.sample).collect();
    Ok(EvalSummary {
        model: model.config().label(),
        split,
        patches: samples.len(),
        accuracy: evaluate(&model, &samples, batch_size)?,
    })
}

#[derive(Serialize)]
struct AblationCsvRow {
    features: String,
    train_acc: f64,
    val_acc: f64,
    test_acc: f64,
}

/// One training run per configured feature mask; writes `ablation.csv` and
/// `ablation.json`.
pub fn cmd_ablate(cfg: &PipelineConfig, dataset: &Path, out: &Path) -> Result<Vec<AblationRow>> {
    let all: Vec<usize> = cfg.ablation_masks.iter().flatten().copied().collect();
    let [tr, va, te] = load_samples(dataset, &all)?;
    let rows = ablate(&cfg.model, &cfg.ablation_masks, (&tr, &va, &te), &cfg.train)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("ablation.json"), &rows)?;
    write_csv(
        &out.join("ablation.csv"),
        rows.iter().map(|r| AblationCsvRow {
            features: mask_label(&r.mask),
            train_acc: r.train_acc,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
        }),
    )?;
    Ok(rows)
}

/// `[0, 2, 3]` as `0,2,3`.
pub fn mask_label(mask: &[usize]) -> String {
    mask.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
}
