//! Workloads shared by the benchmarks and the acceptance checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumorgraph::geom::{dist, Vec3};
use tumorgraph::sim::{kernel_rho, GlobalParams, KernelParams, SpatialIndex};

/// `n` points uniform in a ball sized for unit number density, about what a
/// packed tumor reaches.
pub fn ball_points(n: usize, seed: u64) -> Vec<Vec3> {
    let radius = (3.0 * n as f64 / (4.0 * std::f64::consts::PI)).cbrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
            out.push([p[0] * radius, p[1] * radius, p[2] * radius]);
        }
    }
    out
}

pub fn build_index(points: &[Vec3], k: &KernelParams) -> SpatialIndex {
    let cell = k.cutoff.expect("density kernel has a cutoff");
    SpatialIndex::from_points(cell, points.iter().enumerate().map(|(i, p)| (i as u32, *p)))
}

/// Density of point `i` by scanning every other point.
pub fn brute_force_density(points: &[Vec3], i: usize, k: &KernelParams) -> f64 {
    let target = &points[i];
    points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| kernel_rho(dist(target, p), k))
        .sum()
}

/// Density of point `i` through the grid index.
pub fn indexed_density(points: &[Vec3], i: usize, index: &SpatialIndex, k: &KernelParams) -> f64 {
    tumorgraph::sim::local_density(&points[i], Some(i as u32), index, k)
}

/// Full-scale growth parameters stopped after `births` divisions.
pub fn paper_params(births: u64, seed: u64) -> GlobalParams {
    let mut gp = tumorgraph::pipeline::PipelineConfig::paper().sim.params;
    gp.mutation_probability = 0.01;
    gp.max_birth_events = Some(births);
    gp.max_sim_time = None;
    gp.rng_seed = seed;
    gp
}
