//! Hand-crafted node features and edge attributes for patch graphs.
//!
//! Columns follow the feature IDs used by the ablation experiments:
//! 0 local intensity, 1 density, 2 local birth intensity, 3 local death
//! intensity, 4 Voronoi volume, 5 birth flag, 6 death flag.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{derive_seed, dist, sub, Vec3};
use crate::graph::{PatchGraph, PatchSource};

pub const FEATURE_COUNT: usize = 7;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "local_intensity",
    "density",
    "local_birth_intensity",
    "local_death_intensity",
    "cell_volume",
    "birth_flag",
    "death_flag",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Gaussian width of the intensity weights.
    pub sigma: f64,
    pub volume_samples: usize,
    pub volume_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { sigma: 1.0, volume_samples: 100_000, volume_seed: 0x5eed_0f_70_1e }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("feature sigma must be positive, got {}", self.sigma)));
        }
        if self.volume_samples < 1000 {
            return Err(Error::InvalidParameter(format!(
                "volume_samples must be at least 1000, got {}",
                self.volume_samples
            )));
        }
        Ok(())
    }

    fn weight(&self, d: f64) -> f64 {
        let x = d / self.sigma;
        (-0.5 * x * x).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    #[serde(rename = "H")]
    pub rows: Vec<[f64; FEATURE_COUNT]>,
    pub edge_attr: Vec<f64>,
}

impl FeatureMatrix {
    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Mean Gaussian weight over graph neighbours; 0 for an isolated node.
pub fn local_intensity(g: &PatchGraph, cfg: &FeatureConfig) -> Vec<f64> {
    let n = g.node_count();
    let mut sum = vec![0.0; n];
    let mut deg = vec![0usize; n];
    for &(i, j, _) in &g.edges {
        let w = cfg.weight(dist(&g.nodes[i].position, &g.nodes[j].position));
        sum[i] += w;
        sum[j] += w;
        deg[i] += 1;
        deg[j] += 1;
    }
    sum.iter().zip(&deg).map(|(s, &d)| if d == 0 { 0.0 } else { s / d as f64 }).collect()
}

pub fn density_feature(g: &PatchGraph) -> Result<Vec<f64>> {
    g.nodes
        .iter()
        .enumerate()
        .map(|(i, c)| if c.density.is_finite() && c.density >= 0.0 { Ok(c.density) } else { Err(Error::UnfeaturizedNode(i)) })
        .collect()
}

/// Mean Gaussian weight from each node to the nodes selected by `member`
/// (the node itself included); 0 everywhere when nothing is selected.
fn event_intensity(g: &PatchGraph, cfg: &FeatureConfig, member: impl Fn(usize) -> bool) -> Vec<f64> {
    let events: Vec<&Vec3> = (0..g.node_count()).filter(|&i| member(i)).map(|i| &g.nodes[i].position).collect();
    if events.is_empty() {
        return vec![0.0; g.node_count()];
    }
    let inv = 1.0 / events.len() as f64;
    g.nodes
        .iter()
        .map(|v| events.iter().map(|p| cfg.weight(dist(&v.position, p))).sum::<f64>() * inv)
        .collect()
}

pub fn local_birth_intensity(g: &PatchGraph, cfg: &FeatureConfig) -> Vec<f64> {
    event_intensity(g, cfg, |i| g.nodes[i].birth_flag == 1)
}

pub fn local_death_intensity(g: &PatchGraph, cfg: &FeatureConfig) -> Vec<f64> {
    event_intensity(g, cfg, |i| g.nodes[i].death_flag == 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeEstimate {
    pub volumes: Vec<f64>,
    /// Samples assigned to each node; they partition the sample set.
    pub counts: Vec<u64>,
    pub region_volume: f64,
    /// Binomial standard error of each volume.
    pub std_error: Vec<f64>,
}

pub fn volume_seed(cfg: &FeatureConfig, source: &PatchSource) -> u64 {
    derive_seed(&[
        cfg.volume_seed,
        source.tumor,
        source.cut.z_ref.to_bits(),
        source.cut.t_ref.to_bits(),
        source.cut.thickness.to_bits(),
        source.cut.window.to_bits(),
        source.cut.axis.index() as u64,
        source.patch as u64,
    ])
}

/// Monte Carlo Voronoi volumes clipped to the box `[-R, R]^3` around the
/// patch center. Sampling happens in center-relative coordinates so the
/// estimate depends only on relative positions.
pub fn cell_volume(g: &PatchGraph, cfg: &FeatureConfig) -> Result<VolumeEstimate> {
    cfg.validate()?;
    let n = g.node_count();
    if n == 0 {
        return Err(Error::Empty("patch".into()));
    }
    let r = g.radius;
    let region_volume = (2.0 * r).powi(3);
    let rel: Vec<Vec3> = g.nodes.iter().map(|c| sub(&c.position, &g.center)).collect();
    let mut counts = vec![0u64; n];
    let mut rng = ChaCha8Rng::seed_from_u64(volume_seed(cfg, &g.source));
    if n == 1 {
        counts[0] = cfg.volume_samples as u64;
    } else {
        let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&rel);
        for _ in 0..cfg.volume_samples {
            let q = [rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r)];
            counts[tree.nearest_one::<SquaredEuclidean>(&q).item as usize] += 1;
        }
    }
    let m = cfg.volume_samples as f64;
    let volumes = counts.iter().map(|&c| region_volume * c as f64 / m).collect();
    let std_error = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / m;
            region_volume * (p * (1.0 - p) / m).sqrt()
        })
        .collect();
    Ok(VolumeEstimate { volumes, counts, region_volume, std_error })
}

pub fn assemble_features(g: &PatchGraph, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let lam = local_intensity(g, cfg);
    let rho = density_feature(g)?;
    let lam_b = local_birth_intensity(g, cfg);
    let lam_d = local_death_intensity(g, cfg);
    let vol = cell_volume(g, cfg)?.volumes;
    let rows = (0..g.node_count())
        .map(|i| {
            let c = &g.nodes[i];
            [lam[i], rho[i], lam_b[i], lam_d[i], vol[i], c.birth_flag as f64, c.death_flag as f64]
        })
        .collect();
    let edge_attr = g.edges.iter().map(|&(i, j, _)| dist(&g.nodes[i].position, &g.nodes[j].position)).collect();
    Ok(FeatureMatrix { rows, edge_attr })
}
