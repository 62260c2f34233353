use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::AddAssign;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PatchConfig, PipelineConfig, Split};
use super::simulate::Manifest;
use super::{write_csv, write_json};
use crate::cut::{extract_patch, sample_patch_centers, CutContext, CutSpec};
use crate::error::{Error, Result};
use crate::features::{assemble_features, FEATURE_NAMES};
use crate::geom::{derive_seed, Vec3};
use crate::graph::{accept_graph, build_knn_graph, PatchGraph, PatchSource};
use crate::labeling::{label_patch, rebalance, HeterogeneityClass, LabelConfig};
use crate::model::GraphSample;
use crate::sim::{load_trace, TumorHistory};

pub const STATS_FILE: &str = "stats.json";
const CENTER_STREAM: u64 = 0x63656e74;
const BALANCE_STREAM: u64 = 0x62616c61;

/// What happened to the sampled patch centers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub centers: usize,
    /// Cuts that held no cells at all.
    pub empty_cuts: usize,
    /// Patches with too few nodes or edges.
    pub too_small: usize,
    /// Patches whose entropy fell in the discard band.
    pub discarded: usize,
    pub low: usize,
    pub high: usize,
}

impl AddAssign for FilterCounts {
    fn add_assign(&mut self, o: Self) {
        self.centers += o.centers;
        self.empty_cuts += o.empty_cuts;
        self.too_small += o.too_small;
        self.discarded += o.discarded;
        self.low += o.low;
        self.high += o.high;
    }
}

impl FilterCounts {
    pub fn accepted(&self) -> usize {
        self.discarded + self.low + self.high
    }
}

/// Enough to rebuild a patch graph from its trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchKey {
    pub tumor: usize,
    pub cut_index: usize,
    pub patch: usize,
    pub center: Vec3,
    pub entropy: f64,
    pub class: HeterogeneityClass,
}

fn cut_contexts<'a>(h: &'a TumorHistory, cuts: &[CutSpec]) -> Result<CutContext<'a>> {
    let ctx = CutContext::new(h);
    let missing: Vec<String> = cuts
        .iter()
        .filter(|s| !ctx.covers(s.window_end()))
        .map(|s| format!("{:?} at {} t=[{}, {}]", s.axis, s.z_ref, s.t_ref, s.window_end()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::HistoryTooShort { missing, end_time: h.end_time });
    }
    Ok(ctx)
}

fn patch_graph(cells: &[crate::cut::CutCell], center: Vec3, source: PatchSource, pc: &PatchConfig) -> Result<Option<PatchGraph>> {
    let nodes = extract_patch(cells, &center, pc.radius);
    if nodes.len() < 2 {
        return Ok(None);
    }
    let g = build_knn_graph(nodes, center, pc.radius, source, pc.k)?;
    Ok(accept_graph(&g).then_some(g))
}

/// Samples `per_cut` centers in every cut, keeps the graphs that pass the
/// size filter and labels them. Centers come from a stream keyed by
/// `(seed, cut index)`, so the result does not depend on which other cuts
/// are configured after this one.
pub fn label_tumor(
    h: &TumorHistory,
    tumor: usize,
    seed: u64,
    cuts: &[CutSpec],
    pc: &PatchConfig,
    per_cut: usize,
    lc: &LabelConfig,
) -> Result<(Vec<PatchKey>, FilterCounts)> {
    let ctx = cut_contexts(h, cuts)?;
    let mut keys = Vec::new();
    let mut counts = FilterCounts::default();
    for (ci, spec) in cuts.iter().enumerate() {
        let cells = ctx.extract(spec)?;
        counts.centers += per_cut;
        if cells.is_empty() {
            counts.empty_cuts += 1;
            counts.too_small += per_cut;
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, ci as u64, CENTER_STREAM]));
        for (patch, center) in sample_patch_centers(&cells, per_cut, &mut rng)?.into_iter().enumerate() {
            let source = PatchSource { tumor: tumor as u64, cut: *spec, patch };
            let Some(g) = patch_graph(&cells, center, source, pc)? else {
                counts.too_small += 1;
                continue;
            };
            let label = label_patch(&g, lc)?;
            match label.class {
                HeterogeneityClass::Low => counts.low += 1,
                HeterogeneityClass::High => counts.high += 1,
                HeterogeneityClass::Discarded => counts.discarded += 1,
            }
            keys.push(PatchKey { tumor, cut_index: ci, patch, center, entropy: label.entropy, class: label.class });
        }
    }
    Ok((keys, counts))
}

/// One emitted classification example with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub split: Split,
    pub tumor: usize,
    pub tumor_seed: u64,
    pub mutation_probability: f64,
    pub cut: CutSpec,
    pub patch: usize,
    pub center: Vec3,
    pub entropy: f64,
    pub class: HeterogeneityClass,
    pub births: usize,
    pub deaths: usize,
    pub sample: GraphSample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 below two values.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        Self { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub tumors: usize,
    pub filters: FilterCounts,
    pub patches: usize,
    pub low: usize,
    pub high: usize,
    pub cells: MeanSd,
    pub edges: MeanSd,
    pub births: MeanSd,
    pub deaths: MeanSd,
    pub entropy: MeanSd,
}

impl SplitStats {
    fn new(split: Split, tumors: usize, filters: FilterCounts, records: &[DatasetRecord]) -> Self {
        let count = |c| records.iter().filter(|r| r.class == c).count();
        Self {
            split,
            tumors,
            filters,
            patches: records.len(),
            low: count(HeterogeneityClass::Low),
            high: count(HeterogeneityClass::High),
            cells: MeanSd::of(records.iter().map(|r| r.sample.node_count() as f64)),
            edges: MeanSd::of(records.iter().map(|r| r.sample.edges.len() as f64)),
            births: MeanSd::of(records.iter().map(|r| r.births as f64)),
            deaths: MeanSd::of(records.iter().map(|r| r.deaths as f64)),
            entropy: MeanSd::of(records.iter().map(|r| r.entropy)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub features: Vec<String>,
    pub splits: Vec<SplitStats>,
}

impl DatasetStats {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(STATS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Serialize)]
struct StatsRow {
    split: &'static str,
    tumors: usize,
    centers: usize,
    too_small: usize,
    discarded: usize,
    labeled_low: usize,
    labeled_high: usize,
    patches: usize,
    cells_mean: f64,
    cells_sd: f64,
    births_mean: f64,
    births_sd: f64,
    deaths_mean: f64,
    deaths_sd: f64,
    entropy_mean: f64,
    entropy_sd: f64,
}

pub fn split_path(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

/// Builds the labeled, balanced and featurized dataset from the traces in
/// `sim_dir` and writes one JSONL file per split plus statistics.
pub fn cmd_dataset(cfg: &PipelineConfig, sim_dir: &Path, out: &Path) -> Result<DatasetStats> {
    let manifest = Manifest::load(sim_dir)?;
    if manifest.tumors.is_empty() {
        return Err(Error::Data("manifest lists no tumors".into()));
    }
    let pc = &cfg.patches;

    let labeled = manifest
        .tumors
        .par_iter()
        .map(|t| {
            let h = load_trace(&manifest.trace_path(sim_dir, t))?;
            label_tumor(&h, t.index, t.seed, &cfg.cuts, pc, pc.per_cut, &cfg.labeling)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut kept: Vec<PatchKey> = Vec::new();
    let mut split_counts: BTreeMap<Split, (usize, FilterCounts)> = BTreeMap::new();
    for split in Split::ALL {
        let mut counts = FilterCounts::default();
        let mut keys = Vec::new();
        let mut tumors = 0;
        for (t, (k, c)) in manifest.tumors.iter().zip(&labeled) {
            if t.split == split {
                tumors += 1;
                counts += *c;
                keys.extend_from_slice(k);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.sim.master_seed, split.index() as u64, BALANCE_STREAM]));
        let balanced = rebalance(keys, |k| k.class, &mut rng).map_err(|e| {
            Error::Data(format!("{} split cannot be balanced ({e}); {tumors} tumor(s), filter counts {counts:?}", split.name()))
        })?;
        kept.extend(balanced);
        split_counts.insert(split, (tumors, counts));
    }

    let by_tumor: Vec<Vec<PatchKey>> = manifest
        .tumors
        .iter()
        .map(|t| kept.iter().filter(|k| k.tumor == t.index).copied().collect())
        .collect();
    let built = manifest
        .tumors
        .par_iter()
        .zip(&by_tumor)
        .map(|(t, keys)| build_records(cfg, sim_dir, &manifest, t, keys))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let records: Vec<DatasetRecord> =
            built.iter().flatten().filter(|r| r.split == split).cloned().collect();
        write_jsonl(&split_path(out, split), &records)?;
        let (tumors, counts) = split_counts[&split];
        splits.push(SplitStats::new(split, tumors, counts, &records));
    }
    let stats = DatasetStats { features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), splits };
    write_json(&out.join(STATS_FILE), &stats)?;
    let rows = stats.splits.iter().map(|s| StatsRow {
        split: s.split.name(),
        tumors: s.tumors,
        centers: s.filters.centers,
        too_small: s.filters.too_small,
        discarded: s.filters.discarded,
        labeled_low: s.filters.low,
        labeled_high: s.filters.high,
        patches: s.patches,
        cells_mean: s.cells.mean,
        cells_sd: s.cells.sd,
        births_mean: s.births.mean,
        births_sd: s.births.sd,
        deaths_mean: s.deaths.mean,
        deaths_sd: s.deaths.sd,
        entropy_mean: s.entropy.mean,
        entropy_sd: s.entropy.sd,
    });
    write_csv(&out.join("stats.csv"), rows)?;
    Ok(stats)
}

fn build_records(
    cfg: &PipelineConfig,
    sim_dir: &Path,
    manifest: &Manifest,
    t: &super::simulate::TumorEntry,
    keys: &[PatchKey],
) -> Result<Vec<DatasetRecord>> {
    if keys.is_empty() {
        return Ok(Vec::new());
    }
    let h = load_trace(&manifest.trace_path(sim_dir, t))?;
    let ctx = cut_contexts(&h, &cfg.cuts)?;
    let mut cut_cache: BTreeMap<usize, Vec<crate::cut::CutCell>> = BTreeMap::new();
    let mut out = Vec::with_capacity(keys.len());
    for k in keys {
        let spec = cfg.cuts[k.cut_index];
        if !cut_cache.contains_key(&k.cut_index) {
            cut_cache.insert(k.cut_index, ctx.extract(&spec)?);
        }
        let source = PatchSource { tumor: t.index as u64, cut: spec, patch: k.patch };
        let g = patch_graph(&cut_cache[&k.cut_index], k.center, source, &cfg.patches)?
            .ok_or_else(|| Error::Data(format!("patch {k:?} no longer passes the size filter")))?;
        let h = assemble_features(&g, &cfg.features)?;
        let target = k.class.target().expect("balanced patches are labeled");
        out.push(DatasetRecord {
            split: t.split,
            tumor: t.index,
            tumor_seed: t.seed,
            mutation_probability: t.mutation_probability,
            cut: spec,
            patch: k.patch,
            center: k.center,
            entropy: k.entropy,
            class: k.class,
            births: g.nodes.iter().filter(|c| c.birth_flag == 1).count(),
            deaths: g.nodes.iter().filter(|c| c.death_flag == 1).count(),
            sample: GraphSample::from_patch(&g, &h, target)?,
        });
    }
    Ok(out)
}

fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<DatasetRecord>> {
    let path = split_path(dir, split);
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// The three splits as bare samples, after checking the dataset carries
/// the feature columns the mask refers to.
pub fn load_samples(dir: &Path, mask: &[usize]) -> Result<[Vec<GraphSample>; 3]> {
    check_columns(dir, mask)?;
    let load = |s| -> Result<Vec<GraphSample>> { Ok(load_split(dir, s)?.into_iter().map(|r| r.sample).collect()) };
    Ok([load(Split::Train)?, load(Split::Val)?, load(Split::Test)?])
}

/// Fails unless the dataset in `dir` has the expected feature columns and
/// every mask entry names one of them.
pub fn check_columns(dir: &Path, mask: &[usize]) -> Result<()> {
    let stats = DatasetStats::load(dir)?;
    if stats.features != FEATURE_NAMES {
        return Err(Error::Data(format!("dataset feature columns {:?} differ from {:?}", stats.features, FEATURE_NAMES)));
    }
    if let Some(&bad) = mask.iter().find(|&&m| m >= stats.features.len()) {
        return Err(Error::Config(format!("feature mask refers to column {bad}, dataset has {}", stats.features.len())));
    }
    Ok(())
}
