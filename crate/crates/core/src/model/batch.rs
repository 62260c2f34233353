use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FEATURE_COUNT};
use crate::graph::PatchGraph;
use crate::nn::{Neighborhoods, Segments, Tensor};

/// One labelled classification unit: node features, undirected edges and
/// their distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub features: Vec<[f64; FEATURE_COUNT]>,
    pub edges: Vec<(usize, usize)>,
    pub edge_attr: Vec<f64>,
    pub label: usize,
}

impl GraphSample {
    pub fn from_patch(g: &PatchGraph, h: &FeatureMatrix, label: usize) -> Result<Self> {
        if h.node_count() != g.node_count() || h.edge_attr.len() != g.edge_count() {
            return Err(Error::Data("feature matrix does not match its graph".into()));
        }
        Ok(Self {
            features: h.rows.clone(),
            edges: g.edges.iter().map(|&(i, j, _)| (i, j)).collect(),
            edge_attr: h.edge_attr.clone(),
            label,
        })
    }

    pub fn node_count(&self) -> usize {
        self.features.len()
    }
}

/// Per-feature shift and scale applied to node features before the
/// embedding block. Fitted on the nodes of the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
}

impl InputScaling {
    /// Pooled node mean and standard deviation of every feature. A constant
    /// feature keeps scale 1.
    pub fn fit(samples: &[GraphSample]) -> Result<Self> {
        let n: usize = samples.iter().map(GraphSample::node_count).sum();
        if n == 0 {
            return Err(Error::Empty("feature scaling sample".into()));
        }
        let rows = || samples.iter().flat_map(|s| s.features.iter());
        let mut mean = [0.0; FEATURE_COUNT];
        for r in rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut std = [0.0; FEATURE_COUNT];
        for r in rows() {
            for c in 0..FEATURE_COUNT {
                std[c] += (r[c] - mean[c]).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / n as f64).sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        }
        Ok(Self { mean, std })
    }

    /// Standardizes the columns of `x`, which hold the features in `mask`.
    pub fn apply(&self, x: &Tensor, mask: &[usize]) -> Tensor {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, &f) in mask.iter().enumerate() {
                out.set(r, c, (x.get(r, c) - self.mean[f]) / self.std[f]);
            }
        }
        out
    }
}

/// Several graphs stacked into one disconnected graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub x: Tensor,
    pub slot_attr: Tensor,
    pub neighborhoods: Arc<Neighborhoods>,
    pub segments: Arc<Segments>,
    pub labels: Vec<usize>,
}

impl GraphBatch {
    pub fn new(samples: &[&GraphSample], feature_mask: &[usize]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let sizes: Vec<usize> = samples.iter().map(|s| s.node_count()).collect();
        let segments = Segments::from_sizes(&sizes)?;
        let total = segments.total();
        let mut x = Tensor::zeros(total, feature_mask.len());
        let mut edges = Vec::new();
        let mut attr = Vec::new();
        for (g, s) in samples.iter().enumerate() {
            let off = segments.range(g).start;
            for (i, row) in s.features.iter().enumerate() {
                for (c, &f) in feature_mask.iter().enumerate() {
                    x.set(off + i, c, row[f]);
                }
            }
            if s.edges.len() != s.edge_attr.len() {
                return Err(Error::Data(format!("graph {g}: {} edges vs {} attributes", s.edges.len(), s.edge_attr.len())));
            }
            edges.extend(s.edges.iter().map(|&(i, j)| (off + i, off + j)));
            attr.extend_from_slice(&s.edge_attr);
        }
        let (nb, slot_attr) = Neighborhoods::with_self_loops(total, &edges, &attr)?;
        Ok(Self {
            x,
            slot_attr: Tensor::new(slot_attr.len(), 1, slot_attr)?,
            neighborhoods: Arc::new(nb),
            segments: Arc::new(segments),
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn graph_count(&self) -> usize {
        self.labels.len()
    }
}
