//! Minimal reverse-mode differentiation for graph attention networks.

pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheckOptions, TensorCheck};
pub use optim::{lr_schedule, Adam};
pub use tape::{gelu, GeluKind, Neighborhoods, Segments, Tape, Var, GRAPHNORM_EPS, LEAKY_SLOPE};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
