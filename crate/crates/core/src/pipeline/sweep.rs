use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::dataset::{label_tumor, FilterCounts, MeanSd};
use super::simulate::simulate_until_usable;
use super::{write_csv, write_json};
use crate::error::{Error, Result};
use crate::geom::derive_seed;

const SWEEP_STREAM: u64 = 0x73776570;

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks. Returns 0 when either input is
/// constant, since the coefficient is undefined there.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mutation_probability: f64,
    pub tumors: usize,
    /// Seeds of the accepted runs, in tumor order.
    pub seeds: Vec<u64>,
    pub counts: FilterCounts,
    /// High-class patches over all patches that passed the size filter.
    pub high_fraction: f64,
    pub entropy: MeanSd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub spearman: f64,
}

impl SweepReport {
    pub fn from_rows(rows: Vec<SweepRow>) -> Self {
        let p: Vec<f64> = rows.iter().map(|r| r.mutation_probability).collect();
        let f: Vec<f64> = rows.iter().map(|r| r.high_fraction).collect();
        Self { spearman: spearman(&p, &f), rows }
    }
}

/// Simulates and labels `tumors_per_level` tumors at one mutation level.
pub fn sweep_level(cfg: &PipelineConfig, level: usize) -> Result<SweepRow> {
    let p = cfg.sweep.mutation_probabilities[level];
    let required = cfg.required_time();
    let per_tumor = (0..cfg.sweep.tumors_per_level)
        .into_par_iter()
        .map(|i| {
            let seed_of = |a: u32| derive_seed(&[cfg.sim.master_seed, SWEEP_STREAM, level as u64, i as u64, a as u64]);
            let (h, seed, _) = simulate_until_usable(&cfg.sim, p, required, seed_of)?;
            let (keys, counts) = label_tumor(&h, i, seed, &cfg.cuts, &cfg.patches, cfg.sweep.patches_per_cut, &cfg.labeling)?;
            Ok((seed, keys, counts))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = FilterCounts::default();
    for (_, _, c) in &per_tumor {
        counts += *c;
    }
    let accepted = counts.accepted();
    Ok(SweepRow {
        mutation_probability: p,
        tumors: per_tumor.len(),
        seeds: per_tumor.iter().map(|t| t.0).collect(),
        counts,
        high_fraction: if accepted == 0 { 0.0 } else { counts.high as f64 / accepted as f64 },
        entropy: MeanSd::of(per_tumor.iter().flat_map(|t| t.1.iter().map(|k| k.entropy))),
    })
}

#[derive(Serialize)]
struct SweepCsvRow {
    mutation_probability: f64,
    tumors: usize,
    accepted: usize,
    low: usize,
    high: usize,
    discarded: usize,
    high_fraction: f64,
    entropy_mean: f64,
    entropy_sd: f64,
}

/// Fraction of high-heterogeneity patches per mutation level and its rank
/// correlation with the level. Writes `sweep.csv` and `sweep.json`.
pub fn cmd_sweep_report(cfg: &PipelineConfig, out: &Path) -> Result<SweepReport> {
    let levels = cfg.sweep.mutation_probabilities.len();
    if levels < 3 {
        return Err(Error::Config(format!("sweep needs at least 3 mutation levels, got {levels}")));
    }
    let rows = (0..levels).map(|l| sweep_level(cfg, l)).collect::<Result<Vec<_>>>()?;
    let report = SweepReport::from_rows(rows);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("sweep.json"), &report)?;
    write_csv(
        &out.join("sweep.csv"),
        report.rows.iter().map(|r| SweepCsvRow {
            mutation_probability: r.mutation_probability,
            tumors: r.tumors,
            accepted: r.counts.accepted(),
            low: r.counts.low,
            high: r.counts.high,
            discarded: r.counts.discarded,
            high_fraction: r.high_fraction,
            entropy_mean: r.entropy.mean,
            entropy_sd: r.entropy.sd,
        }),
    )?;
    Ok(report)
}
