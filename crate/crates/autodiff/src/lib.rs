//! Dense-tensor reverse-mode automatic differentiation sized for small
//! sequence encoders and sparse GP heads.
//!
//! Graphs are rebuilt every step: create a [`Graph`], bind a [`ParamSet`],
//! compose ops, call [`Graph::backward`] on a scalar and hand the gradients
//! to [`AdamState::step`].

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod linalg;
pub mod params;
pub mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{AutodiffError, Result};
pub use graph::{conv1d_output_len, matern52_from_sq, Gradients, Graph, Var};
pub use params::{Binding, ParamId, ParamSet};
pub use tensor::Tensor;
