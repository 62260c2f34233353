//! Spatial birth-death tumor simulator.

mod engine;
mod history;
mod index;
mod kernels;
mod params;
mod trace;

pub use engine::{local_density, simulate, spawn_daughters};
pub use history::{Cell, CloneRecord, EventKind, EventRecord, Fate, Termination, TumorHistory};
pub use index::SpatialIndex;
pub use kernels::{birth_rate, death_rate, kernel_rho, mutate_all, mutate_intrinsic, success_probability};
pub use params::{GlobalParams, IntrinsicParams, KernelParams, RateKernels};
pub use trace::{load_trace, read_trace, save_trace, write_trace, TraceHeader, TRACE_MAGIC, TRACE_SCHEMA_VERSION};
