//! Graph-convolutional normalizing flows with Gaussian-mixture base densities.
//!
//! The crate bundles a small reverse-mode autodiff engine, graph adjacency
//! normalizations with exact log-determinants, affine-coupling flows that
//! interleave graph convolutions, a mixture-density head with a
//! semi-supervised likelihood objective, GCN and EM-GMM baselines, clustering
//! metrics, dataset I/O and a full-batch trainer.

pub mod adjparam;
pub mod autodiff;
pub mod baselines;
pub mod datasets;
pub mod density;
pub mod error;
pub mod evalkit;
pub mod flow;
pub mod graph;
pub mod linalg;
pub mod nn;
pub mod params;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
