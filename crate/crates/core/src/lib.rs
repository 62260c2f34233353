//! Simulated tumor heterogeneity workbench.
//!
//! The pipeline runs a spatial birth-death tumor simulation, slices the
//! recorded history into thin cuts, samples spherical patches, turns each
//! patch into a symmetrized k-nearest-neighbour graph with hand-crafted node
//! features, labels it by normalized clone entropy, and classifies patches
//! with a block graph-attention network.

pub mod error;
pub mod geom;
pub mod sim;

pub use error::{Error, Result};
pub mod cut;
pub mod graph;
pub mod labeling;
pub mod features;
pub mod nn;
pub mod model;
pub mod pipeline;
