//! Infrared/visible image fusion: a dual-encoder convolutional network trained
//! with a differentiable no-reference fusion-quality loss, on top of a small
//! reverse-mode autodiff core.

pub mod error;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Shape, Tensor, Var};
pub mod metrics;
pub mod loss;
pub mod model;
pub mod io;
pub mod trainer;
