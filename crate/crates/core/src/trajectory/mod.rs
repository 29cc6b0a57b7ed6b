//! Expert trajectories: recording, shortcut construction and persistence.

mod beta;
mod buffer;
mod shortcut;
mod teacher;

pub use beta::{compute_beta, BetaTable, DegenerateLayer};
pub use buffer::{
    decode_trajectory, encode_trajectory, load_trajectory, save_trajectory, write_buffer, BufferManifest,
    ExpertBuffer, read_manifest,
};
pub use shortcut::{build_shortcut, query_shortcut, ShortcutTrajectory};
pub use teacher::{sgd_momentum_step, train_teacher, SgdMomentum, TeacherConfig, TeacherTrajectory, TrainingMeta};

use crate::datamodel::ParamVector;
use crate::error::{Error, Result};

/// A sequence of parameter checkpoints indexed by epoch `0..=horizon`.
pub trait TrajectorySource {
    fn horizon(&self) -> usize;

    fn checkpoint(&self, t: usize) -> &ParamVector;

    /// Parameters at fractional epoch `t`, linear between checkpoints.
    fn query(&self, t: f64) -> Result<ParamVector> {
        let n = self.horizon();
        if !t.is_finite() || t < 0.0 || t > n as f64 {
            return Err(Error::invalid(format!("t = {t} outside [0, {n}]")));
        }
        let lo = t.floor() as usize;
        let frac = t - lo as f64;
        if frac == 0.0 {
            return Ok(self.checkpoint(lo).clone());
        }
        let a = self.checkpoint(lo);
        let b = self.checkpoint(lo + 1);
        let data = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x + frac * (y - x))
            .collect();
        a.with_data(data)
    }
}
