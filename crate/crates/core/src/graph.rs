//! Patch graphs: symmetrized k-nearest-neighbour graphs over patch cells.

use serde::{Deserialize, Serialize};

use crate::cut::{CutCell, CutSpec};
use crate::error::{Error, Result};
use crate::geom::{dist, dist2, Vec3};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_RADIUS: f64 = 10.0;
pub const MIN_NODES_EXCLUSIVE: usize = 100;
pub const MIN_EDGES_EXCLUSIVE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSource {
    pub tumor: u64,
    pub cut: CutSpec,
    pub patch: usize,
}

/// Undirected edge `(i, j, distance)` with `i < j`.
pub type Edge = (usize, usize, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGraph {
    pub source: PatchSource,
    pub center: Vec3,
    pub radius: f64,
    pub nodes: Vec<CutCell>,
    pub edges: Vec<Edge>,
}

impl PatchGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Undirected adjacency lists, neighbours in ascending index order.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j, _) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }
}

/// Builds the directed k-NN relation (ties broken by node index), then keeps
/// each unordered pair once. `k` is clipped to `n - 1`.
pub fn build_knn_graph(
    nodes: Vec<CutCell>,
    center: Vec3,
    radius: f64,
    source: PatchSource,
    k: usize,
) -> Result<PatchGraph> {
    let n = nodes.len();
    if n < 2 {
        return Err(Error::DegeneratePatch(n));
    }
    let k = k.min(n - 1);
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let pi = &nodes[i].position;
        cand.extend((0..n).filter(|&j| j != i).map(|j| (dist2(pi, &nodes[j].position), j)));
        let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_key);
        }
        for &(_, j) in &cand[..k] {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let edges = pairs
        .into_iter()
        .map(|(i, j)| (i, j, dist(&nodes[i].position, &nodes[j].position)))
        .collect();
    Ok(PatchGraph { source, center, radius, nodes, edges })
}

/// Strictly more than 100 nodes and strictly more than 100 undirected edges.
pub fn accept_graph(g: &PatchGraph) -> bool {
    g.node_count() > MIN_NODES_EXCLUSIVE && g.edge_count() > MIN_EDGES_EXCLUSIVE
}
