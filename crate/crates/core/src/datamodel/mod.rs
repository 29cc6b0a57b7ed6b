//! Core value types, the synthetic pair generator, and the `PTMS` binary
//! container.

mod config;
mod dataset;
pub mod io;
mod matrix;
mod params;
mod synthetic;

pub use config::{DistillPlan, PhaseConfig, SimType, TeacherMode};
pub use dataset::{generate_pair_dataset, GeneratorConfig, PairDataset, PairGenerator, Split};
pub use io::{load_checkpoint, load_dataset, load_synthetic, save_checkpoint, save_dataset, save_synthetic};
pub use matrix::Matrix;
pub use params::{LayerSpec, ParamVector};
pub use synthetic::{init_synthetic, SimilarityParams, SyntheticDataset};
pub(crate) use synthetic::initial_similarity;

/// Parameters recorded at one epoch of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ParamVector,
}
