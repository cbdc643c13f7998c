//! Deep clustering with a pairwise-constrained Gaussian mixture prior.
//!
//! A variational autoencoder whose latent prior is a Gaussian mixture over
//! cluster assignments, reweighted by must-link / cannot-link constraints
//! carrying confidence weights. The crate holds the autodiff engine, the
//! networks, the conditional prior and its exhaustive oracles, the
//! conditional evidence lower bound, the training loop, clustering metrics
//! and the file formats used by the `dcgmm` command line tool.

pub mod autodiff;
pub mod checkpoint;
pub mod constraints;
pub mod data;
pub mod error;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod prior;
pub mod quadrature;
pub mod selftest;
pub mod trainer;

pub use error::{Error, Result};
