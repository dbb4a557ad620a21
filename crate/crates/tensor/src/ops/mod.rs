//! Differentiable operations, implemented as methods on [`Var`](crate::Var).

mod activation;
mod conv;
mod elementwise;
mod loss;
mod norm;
mod reduce;
mod shape;

pub use conv::{conv2d_output_size, Padding};
pub use norm::{BatchNormMode, BatchStats};
