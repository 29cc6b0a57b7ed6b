//! Multimodal dataset distillation against phased, shortcut teacher
//! trajectories.
//!
//! The crate records teacher parameter trajectories on paired image/text
//! features, builds per-phase shortcut trajectories by accumulated-distance
//! interpolation, and optimises small synthetic datasets by matching those
//! trajectories through exact meta-gradients of an unrolled inner SGD run.
//!
//! Modules, bottom-up:
//!
//! - [`datamodel`]: parameters, datasets, plans and the `PTMS` file format
//! - [`model`]: the two-tower encoder, InfoNCE / wBCE, recall@K
//! - [`trajectory`]: teacher training, beta tables and shortcut trajectories
//! - [`distill`]: unrolling, meta-gradients, EMA and the phased loop
//! - [`eval`]: progressive student training and coreset baselines
//! - [`analysis`]: gradient cosine matrices, the Δt sweep and PCA export
//! - [`cli`]: key=value configs and the file-based pipelines behind the binary

pub mod analysis;
pub mod cli;
pub mod datamodel;
pub mod distill;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod trajectory;

pub use error::{Error, Result};
