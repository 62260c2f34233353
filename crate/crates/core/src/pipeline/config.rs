use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cut::CutSpec;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FEATURE_COUNT};
use crate::graph::{DEFAULT_K, DEFAULT_RADIUS};
use crate::labeling::LabelConfig;
use crate::model::{ModelConfig, TrainConfig};
use crate::sim::{GlobalParams, IntrinsicParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub master_seed: u64,
    pub tumors: usize,
    /// Consecutive tumor counts for train, validation and test.
    pub split: [usize; 3],
    /// Tumor `i` uses entry `i mod len`.
    pub mutation_probabilities: Vec<f64>,
    pub initial_cells: u32,
    /// Seeds tried per tumor before giving up on one that dies out or stops
    /// short of the last cut window.
    pub max_attempts: u32,
    pub params: GlobalParams,
    pub intrinsics: IntrinsicParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub per_cut: usize,
    pub radius: f64,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mutation_probabilities: Vec<f64>,
    pub tumors_per_level: usize,
    pub patches_per_cut: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub sim: SimConfig,
    pub cuts: Vec<CutSpec>,
    pub patches: PatchConfig,
    pub labeling: LabelConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation_masks: Vec<Vec<usize>>,
    pub sweep: SweepConfig,
}

/// Feature subsets of the ablation table.
pub fn default_ablation_masks() -> Vec<Vec<usize>> {
    vec![
        vec![0],
        vec![0, 1],
        vec![0, 4],
        vec![0, 1, 4],
        vec![0, 2, 3],
        vec![0, 5, 6],
        vec![0, 1, 2, 3],
        vec![2, 3, 5, 6],
        (0..FEATURE_COUNT).collect(),
    ]
}

impl PipelineConfig {
    /// Full-scale setup: 200 tumors of about a million births each.
    pub fn paper() -> Self {
        let mut params = GlobalParams { max_birth_events: Some(2_000_000), max_sim_time: Some(61.5), ..Default::default() };
        params.kernels.birth.scale = 4.0;
        params.kernels.lifespan.scale = 50.0;
        for k in [&mut params.kernels.birth, &mut params.kernels.success, &mut params.kernels.lifespan] {
            k.width = 15.0;
        }
        Self {
            preset: Preset::Paper,
            sim: SimConfig {
                master_seed: 2024,
                tumors: 200,
                split: [160, 20, 20],
                mutation_probabilities: vec![0.01, 0.03, 0.1],
                initial_cells: 1,
                max_attempts: 20,
                params,
                intrinsics: IntrinsicParams::reference(),
            },
            cuts: CutSpec::standard_battery(),
            patches: PatchConfig { per_cut: 100, radius: DEFAULT_RADIUS, k: DEFAULT_K },
            labeling: LabelConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation_masks: default_ablation_masks(),
            sweep: SweepConfig {
                mutation_probabilities: vec![0.001, 0.003, 0.01, 0.03, 0.1],
                tumors_per_level: 10,
                patches_per_cut: 100,
            },
        }
    }

    /// Laptop-scale setup: 20 tumors capped at 1e5 births, sized so the whole
    /// chain including training runs in well under an hour.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.preset = Preset::Desk;
        let p = &mut c.sim.params;
        p.max_birth_events = Some(100_000);
        p.kernels.birth.scale = 2.5;
        p.kernels.lifespan.scale = 100.0;
        for k in [&mut p.kernels.birth, &mut p.kernels.success, &mut p.kernels.lifespan] {
            k.width = 10.0;
        }
        c.sim.tumors = 20;
        c.sim.split = [16, 2, 2];
        c.sim.mutation_probabilities = vec![0.05, 0.15];
        c.patches.per_cut = 40;
        c.features.volume_samples = 20_000;
        c.train = TrainConfig::short();
        c.train.eval_train = false;
        c.model.heads = 4;
        c.sweep = SweepConfig {
            mutation_probabilities: vec![0.01, 0.03, 0.05, 0.1, 0.15],
            tumors_per_level: 4,
            patches_per_cut: 20,
        };
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Starts from the named preset (or the file's own `preset` key) and
    /// overlays whatever keys the TOML text sets.
    pub fn from_toml(text: &str, preset: Option<Preset>) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let base_preset = match (preset, overlay.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.as_str().ok_or_else(|| Error::Config("preset must be a string".into()))?.parse()?,
            (None, None) => Preset::Desk,
        };
        let base = toml::Table::try_from(Self::preset(base_preset)).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Value::Table(base);
        merge(&mut merged, toml::Value::Table(overlay));
        if let (Some(p), toml::Value::Table(t)) = (preset, &mut merged) {
            t.insert("preset".into(), toml::Value::String(format!("{p:?}").to_lowercase()));
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, preset)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        let cfg = |m: String| Err(Error::Config(m));
        if s.tumors == 0 {
            return cfg("sim.tumors must be positive".into());
        }
        if s.split.iter().sum::<usize>() != s.tumors || s.split.contains(&0) {
            return cfg(format!("sim.split {:?} must be positive and sum to sim.tumors = {}", s.split, s.tumors));
        }
        if s.mutation_probabilities.is_empty() {
            return cfg("sim.mutation_probabilities is empty".into());
        }
        if s.max_attempts == 0 || s.initial_cells == 0 {
            return cfg("sim.max_attempts and sim.initial_cells must be positive".into());
        }
        for &p in s.mutation_probabilities.iter().chain(&self.sweep.mutation_probabilities) {
            GlobalParams { mutation_probability: p, ..s.params.clone() }.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        s.intrinsics.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.cuts.is_empty() {
            return cfg("no cuts configured".into());
        }
        for c in &self.cuts {
            c.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let p = &self.patches;
        if p.per_cut == 0 || !(p.radius > 0.0) || p.k == 0 {
            return cfg("patches.per_cut, radius and k must be positive".into());
        }
        let l = &self.labeling;
        if !(0.0..=1.0).contains(&l.threshold) || !(l.margin >= 0.0) {
            return cfg("labeling.threshold must lie in [0, 1] and margin be non-negative".into());
        }
        self.features.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        for m in &self.ablation_masks {
            ModelConfig { feature_mask: m.clone(), ..self.model.clone() }.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.sweep.tumors_per_level == 0 || self.sweep.patches_per_cut == 0 {
            return cfg("sweep.tumors_per_level and patches_per_cut must be positive".into());
        }
        Ok(())
    }

    /// Latest time any configured cut needs from a history.
    pub fn required_time(&self) -> f64 {
        self.cuts.iter().map(CutSpec::window_end).fold(0.0, f64::max)
    }

    pub fn mutation_probability(&self, tumor: usize) -> f64 {
        let m = &self.sim.mutation_probabilities;
        m[tumor % m.len()]
    }

    pub fn split_of(&self, tumor: usize) -> Split {
        let [tr, va, _] = self.sim.split;
        if tumor < tr {
            Split::Train
        } else if tumor < tr + va {
            Split::Val
        } else {
            Split::Test
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}
