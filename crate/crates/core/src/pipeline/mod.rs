//! End-to-end stages driven by one [`PipelineConfig`]: simulate tumors,
//! build the labeled dataset, train, evaluate, ablate and sweep the
//! mutation probability. Every stage is a pure function of its config and
//! inputs; parallel work is keyed by per-item seeds.

mod config;
mod dataset;
mod experiment;
mod simulate;
mod sweep;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use config::{default_ablation_masks, PatchConfig, PipelineConfig, Preset, SimConfig, Split, SweepConfig};
pub use dataset::{
    check_columns, cmd_dataset, label_tumor, load_samples, load_split, split_path, DatasetRecord, DatasetStats, FilterCounts,
    MeanSd, PatchKey, SplitStats, STATS_FILE,
};
pub use experiment::{cmd_ablate, cmd_eval, cmd_train, mask_label, EvalSummary, TrainSummary, CHECKPOINT_FILE, REPORT_FILE};
pub use simulate::{
    cmd_simulate, simulate_until_usable, tumor_seed, Manifest, TumorEntry, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION, TRACE_DIR,
};
pub use sweep::{average_ranks, cmd_sweep_report, spearman, sweep_level, SweepReport, SweepRow};


pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
