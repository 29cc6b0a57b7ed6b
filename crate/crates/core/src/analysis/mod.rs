//! Gradient diagnostics: cosine matrices across matching starts, the
//! start-offset sweep, and PCA of gradient directions.

mod cosine;
mod pca;
mod sweep;

pub use cosine::{grad_cosine_matrix, mean_off_diagonal, probe_gradient, GradientProbe};
pub use pca::{pca_gradients, pca_project, PcaProjection};
pub use sweep::{loglog_slope, proposition_sweep, SweepResult};
