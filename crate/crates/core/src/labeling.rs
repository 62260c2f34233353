//! Normalized clone entropy and binary heterogeneity classes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PatchGraph;

#[derive(Clone, Debug, PartialEq)]
pub struct CloneDistribution {
    /// Keyed by mutation id, ascending.
    pub proportions: BTreeMap<u64, f64>,
    pub clone_count: usize,
    pub cell_count: usize,
}

impl CloneDistribution {
    pub fn from_labels(labels: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for l in labels {
            *counts.entry(l).or_default() += 1;
        }
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(Error::Empty("clone distribution".into()));
        }
        Ok(Self {
            clone_count: counts.len(),
            cell_count: total,
            proportions: counts.into_iter().map(|(k, n)| (k, n as f64 / total as f64)).collect(),
        })
    }
}

pub fn clone_proportions(g: &PatchGraph) -> Result<CloneDistribution> {
    CloneDistribution::from_labels(g.nodes.iter().map(|n| n.mutation_id))
}

/// Shannon entropy (bits) divided by `log2(clone_count)`; 0 for a single clone.
pub fn normalized_entropy(d: &CloneDistribution) -> f64 {
    if d.clone_count <= 1 {
        return 0.0;
    }
    let h: f64 = d.proportions.values().map(|&p| -p * p.log2()).sum();
    (h / (d.clone_count as f64).log2()).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeterogeneityClass {
    Low,
    High,
    Discarded,
}

impl HeterogeneityClass {
    /// Training target: 0 = low, 1 = high.
    pub fn target(self) -> Option<usize> {
        match self {
            HeterogeneityClass::Low => Some(0),
            HeterogeneityClass::High => Some(1),
            HeterogeneityClass::Discarded => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub threshold: f64,
    /// Full width of the discard band centred on `threshold`.
    pub margin: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { threshold: 0.4, margin: 0.05 }
    }
}

impl LabelConfig {
    pub fn band(&self) -> (f64, f64) {
        (self.threshold - self.margin / 2.0, self.threshold + self.margin / 2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchLabel {
    pub entropy: f64,
    pub class: HeterogeneityClass,
}

/// Discards the open band `(threshold - margin/2, threshold + margin/2)`;
/// the band edges themselves are kept (up to rounding in `threshold ± margin/2`).
pub fn assign_class(u: f64, cfg: &LabelConfig) -> PatchLabel {
    const EDGE_TOL: f64 = 1e-12;
    let (lo, hi) = cfg.band();
    let class = if u <= lo + EDGE_TOL {
        HeterogeneityClass::Low
    } else if u >= hi - EDGE_TOL {
        HeterogeneityClass::High
    } else {
        HeterogeneityClass::Discarded
    };
    PatchLabel { entropy: u, class }
}

pub fn label_patch(g: &PatchGraph, cfg: &LabelConfig) -> Result<PatchLabel> {
    Ok(assign_class(normalized_entropy(&clone_proportions(g)?), cfg))
}

/// Randomly drops majority-class items so both classes have equal counts.
/// Discarded items are dropped; surviving items keep their relative order.
pub fn rebalance<T, R: Rng + ?Sized>(
    items: Vec<T>,
    class_of: impl Fn(&T) -> HeterogeneityClass,
    rng: &mut R,
) -> Result<Vec<T>> {
    let mut low = Vec::new();
    let mut high = Vec::new();
    for (i, it) in items.iter().enumerate() {
        match class_of(it) {
            HeterogeneityClass::Low => low.push(i),
            HeterogeneityClass::High => high.push(i),
            HeterogeneityClass::Discarded => {}
        }
    }
    if low.is_empty() {
        return Err(Error::CannotBalance("low"));
    }
    if high.is_empty() {
        return Err(Error::CannotBalance("high"));
    }
    let keep_n = low.len().min(high.len());
    for group in [&mut low, &mut high] {
        if group.len() > keep_n {
            group.shuffle(rng);
            group.truncate(keep_n);
        }
    }
    let mut keep = vec![false; items.len()];
    for &i in low.iter().chain(&high) {
        keep[i] = true;
    }
    Ok(items.into_iter().zip(keep).filter_map(|(it, k)| k.then_some(it)).collect())
}
