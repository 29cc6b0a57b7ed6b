use super::beta::{compute_beta, BetaTable, DegenerateLayer};
use super::{TeacherTrajectory, TrajectorySource};
use crate::datamodel::ParamVector;
use crate::error::{Error, Result};

/// Per-phase straight-line teacher: each layer moves from `theta_0` towards
/// `theta_{t_p}` at the pace of the original trajectory.
#[derive(Clone, Debug)]
pub struct ShortcutTrajectory {
    pub phase: usize,
    pub expert_id: usize,
    pub endpoint: usize,
    pub beta: BetaTable,
    checkpoints: Vec<ParamVector>,
}

fn interpolate(start: &ParamVector, end: &ParamVector, beta: &BetaTable, t: f64) -> ParamVector {
    let mut out = start.clone();
    for l in 0..start.num_layers() {
        let b = beta.at(l, t);
        let (s, e) = (start.layer(l), end.layer(l));
        for ((o, &a), &z) in out.layer_mut(l).iter_mut().zip(s).zip(e) {
            *o = (1.0 - b) * a + b * z;
        }
    }
    out
}

impl ShortcutTrajectory {
    /// Builds `theta^p_t = (1 - beta(t)) theta_0 + beta(t) theta_{t_p}` for
    /// `t = 0..=t_p`. The endpoints are copies of the recorded checkpoints.
    pub fn build(traj: &TeacherTrajectory, endpoint: usize, phase: usize, policy: DegenerateLayer) -> Result<Self> {
        let beta = compute_beta(traj, endpoint, phase, policy)?;
        let start = traj.params(0);
        let end = traj.params(endpoint);
        let mut checkpoints = Vec::with_capacity(endpoint + 1);
        checkpoints.push(start.clone());
        for t in 1..endpoint {
            checkpoints.push(interpolate(start, end, &beta, t as f64));
        }
        checkpoints.push(end.clone());
        Ok(ShortcutTrajectory {
            phase,
            expert_id: traj.expert_id,
            endpoint,
            beta,
            checkpoints,
        })
    }

    pub fn checkpoints(&self) -> &[ParamVector] {
        &self.checkpoints
    }
}

/// Shortcut for phase `p` ending at `t_p`; degenerate layers fall back to
/// uniform pacing.
pub fn build_shortcut(traj: &TeacherTrajectory, endpoint: usize, phase: usize) -> Result<ShortcutTrajectory> {
    ShortcutTrajectory::build(traj, endpoint, phase, DegenerateLayer::Uniform)
}

/// Shortcut parameters at fractional `t`: beta is interpolated linearly
/// between integer epochs, then mixed per layer.
pub fn query_shortcut(sc: &ShortcutTrajectory, t: f64) -> Result<ParamVector> {
    if !(0.0..=sc.endpoint as f64).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, {}]", sc.endpoint)));
    }
    if t.fract() == 0.0 {
        return Ok(sc.checkpoints[t as usize].clone());
    }
    Ok(interpolate(&sc.checkpoints[0], &sc.checkpoints[sc.endpoint], &sc.beta, t))
}

impl TrajectorySource for ShortcutTrajectory {
    fn horizon(&self) -> usize {
        self.endpoint
    }

    fn checkpoint(&self, t: usize) -> &ParamVector {
        &self.checkpoints[t]
    }

    fn query(&self, t: f64) -> Result<ParamVector> {
        query_shortcut(self, t)
    }
}
