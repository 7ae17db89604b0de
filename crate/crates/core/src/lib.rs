//! Point-cloud semantic segmentation for shell-construction scans.
//!
//! The crate covers the full desk-scale pipeline: point-cloud I/O and
//! preprocessing, voxel sampling and fragmenting, augmentation, label-space
//! translation between datasets, a small local-attention segmentation network
//! with exact gradients, training and transfer learning, and fragment-voting
//! evaluation with test-time augmentation.
//!
//! Data-parallel loops (per-query kNN, per-scene batches, per-fragment
//! inference) go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and plain iterators otherwise. Results never depend on
//! which one is compiled in.

pub mod augment;
pub mod autodiff;
pub mod cloud;
pub mod error;
pub mod eval;
pub mod exec;
pub mod io;
pub mod labelspace;
pub mod manifest;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod synth;
pub mod training;

pub use cloud::{Label, PointCloud, IGNORE_LABEL};
pub use error::{Error, Result};
