use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Preset, SimConfig, Split};
use super::write_json;
use crate::error::{Error, Result};
use crate::geom::derive_seed;
use crate::sim::{save_trace, simulate, GlobalParams, Termination, TumorHistory};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_DIR: &str = "traces";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorEntry {
    pub index: usize,
    pub split: Split,
    pub mutation_probability: f64,
    /// Seed of the accepted run.
    pub seed: u64,
    /// Runs needed before one reached the last cut window alive.
    pub attempts: u32,
    pub births: u64,
    pub end_time: f64,
    pub termination: Termination,
    /// Trace path relative to the manifest.
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub preset: Preset,
    pub master_seed: u64,
    pub required_time: f64,
    pub tumors: Vec<TumorEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Data(format!("{}: unsupported manifest schema {}", path.display(), m.schema_version)));
        }
        Ok(m)
    }

    pub fn trace_path(&self, dir: &Path, t: &TumorEntry) -> PathBuf {
        dir.join(&t.file)
    }
}

/// Seed of attempt `attempt` for the tumor at `index`.
pub fn tumor_seed(master: u64, index: usize, attempt: u32) -> u64 {
    match attempt {
        0 => derive_seed(&[master, index as u64]),
        a => derive_seed(&[master, index as u64, a as u64]),
    }
}

/// Runs seeds from `seed_of(0), seed_of(1), ...` until a history survives
/// to `required_time`. Returns the history, the seed and the attempt count.
pub fn simulate_until_usable(
    sim: &SimConfig,
    mutation_probability: f64,
    required_time: f64,
    seed_of: impl Fn(u32) -> u64,
) -> Result<(TumorHistory, u64, u32)> {
    let mut last = None;
    for attempt in 0..sim.max_attempts {
        let seed = seed_of(attempt);
        let gp = GlobalParams { mutation_probability, rng_seed: seed, ..sim.params.clone() };
        let h = simulate(&gp, &sim.intrinsics, sim.initial_cells)?;
        if !h.extinct() && h.end_time >= required_time {
            return Ok((h, seed, attempt + 1));
        }
        last = Some((h.termination, h.end_time, h.births));
    }
    let (term, t, b) = last.expect("max_attempts > 0");
    Err(Error::Data(format!(
        "no usable tumor after {} attempts at p_mut={mutation_probability} (last run: {term:?} at t={t:.2} after {b} births; cuts need t>={required_time})",
        sim.max_attempts
    )))
}

/// Simulates every configured tumor into `out/traces` and writes the manifest.
/// Refuses to touch an existing manifest unless `force`.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path, force: bool) -> Result<Manifest> {
    let manifest_path = out.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::Config(format!("{} already exists; pass --force to overwrite", manifest_path.display())));
    }
    let trace_dir = out.join(TRACE_DIR);
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    let required = cfg.required_time();
    let master = cfg.sim.master_seed;
    let tumors = (0..cfg.sim.tumors)
        .into_par_iter()
        .map(|index| {
            let p = cfg.mutation_probability(index);
            let (h, seed, attempts) = simulate_until_usable(&cfg.sim, p, required, |a| tumor_seed(master, index, a))?;
            let file = format!("{TRACE_DIR}/tumor_{index:04}.trace");
            save_trace(&h, &out.join(&file))?;
            Ok(TumorEntry {
                index,
                split: cfg.split_of(index),
                mutation_probability: p,
                seed,
                attempts,
                births: h.births,
                end_time: h.end_time,
                termination: h.termination,
                file,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { schema_version: MANIFEST_SCHEMA_VERSION, preset: cfg.preset, master_seed: master, required_time: required, tumors };
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}
