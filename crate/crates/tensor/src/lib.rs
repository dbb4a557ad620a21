//! A small reverse-mode automatic differentiation engine over row-major
//! `f64` tensors, with the layer primitives and optimiser needed to train
//! convolutional classifiers on the CPU.
//!
//! Values are recorded on a [`Tape`]; every op returns a [`Var`] bound to
//! that tape, and [`Tape::backward`] sweeps the recorded ops in reverse.
//!
//! ```
//! use csad_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::new(&[2], vec![3.0, -1.0]).unwrap());
//! let y = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0, -2.0]);
//! ```

mod error;
mod gemm;
pub mod gradcheck;
pub mod ops;
pub mod optim;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_sampled, relative_error, GradCheckReport};
pub use ops::{conv2d_output_size, BatchNormMode, BatchStats, Padding};
pub use optim::{adam_step, AdamState, Moments, Param};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
