//! Multimodal point cloud completion toolkit.
//!
//! * [`tensor`]: dense tensors with tape-based reverse-mode differentiation.
//! * [`geometry`]: FPS, kNN, Poisson-disk surface sampling, hidden point
//!   removal, noise, resampling and mesh/cloud file IO.
//! * [`metrics`]: Chamfer distances and F-Score with batch reports.
//! * [`model`]: the dual-modality completion network, its loss and training.
//! * [`datasetgen`]: synthesis of the multimodal completion benchmark.
//! * [`cli`]: command-line orchestration.

pub mod cli;
pub mod datasetgen;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
