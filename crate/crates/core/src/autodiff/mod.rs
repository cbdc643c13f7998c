//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::backward`]
//! returns gradients of a scalar root. Graphs are cheap and meant to be
//! rebuilt per minibatch.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{gradcheck, gradcheck_many, GradcheckReport, DEFAULT_STEP};
pub use graph::{lse, Gradients, Graph, Var};
pub use tensor::Tensor;
