use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BatchLossSpec, LossKind};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimType {
    Full,
    #[serde(rename = "lowrank")]
    LowRank,
}

/// Which teacher trajectory the distillation loop matches against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherMode {
    /// Per-phase interpolated trajectory between `theta_0` and `theta_{t_p}`.
    Shortcut,
    /// The recorded checkpoints, unchanged.
    Original,
}

/// Hyperparameters of one distillation phase. Field names follow the
/// configuration keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    /// `N_p`, pairs in this phase's subset.
    pub num_queries: usize,
    /// `I_p`, outer iterations.
    pub iteration: usize,
    /// `T_p^-`.
    pub min_start_epoch: usize,
    /// `T_p^+`.
    pub max_start_epoch: usize,
    /// `t_p`, the shortcut endpoint epoch.
    pub interpolation_endpoint: usize,
    /// `t`, inner SGD steps per match.
    pub syn_steps: usize,
    /// `Delta T`, expert epochs spanned by one match.
    pub expert_epochs: usize,
    /// EMA decay `alpha`.
    pub ema_decay: f64,
    pub lr_img: f64,
    pub lr_txt: f64,
    pub lr_sim: f64,
    pub lr_lr: f64,
    /// Initial inner step sizes.
    pub lr_teacher_img: f64,
    pub lr_teacher_txt: f64,
    pub mini_batch_size: usize,
    pub loss_type: LossKind,
    pub sim_type: SimType,
    pub sim_rank: usize,
    /// Low-rank scale `a`.
    pub sim_scale: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            num_queries: 10,
            iteration: 200,
            min_start_epoch: 0,
            max_start_epoch: 2,
            interpolation_endpoint: 6,
            syn_steps: 4,
            expert_epochs: 1,
            ema_decay: 0.99,
            lr_img: 1.0,
            lr_txt: 1.0,
            lr_sim: 1.0,
            lr_lr: 1e-2,
            lr_teacher_img: 0.1,
            lr_teacher_txt: 0.1,
            mini_batch_size: 10,
            loss_type: LossKind::Wbce,
            sim_type: SimType::Full,
            sim_rank: 10,
            sim_scale: 1.0,
        }
    }
}

impl PhaseConfig {
    /// Checks the phase against a buffer whose trajectories end at epoch `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_queries == 0 {
            return bad("num_queries must be at least 1".into());
        }
        if self.expert_epochs == 0 {
            return bad("expert_epochs must be at least 1".into());
        }
        if self.min_start_epoch > self.max_start_epoch {
            return bad(format!(
                "min_start_epoch {} exceeds max_start_epoch {}",
                self.min_start_epoch, self.max_start_epoch
            ));
        }
        if self.max_start_epoch >= self.interpolation_endpoint {
            return bad(format!(
                "max_start_epoch {} must be below interpolation_endpoint {}",
                self.max_start_epoch, self.interpolation_endpoint
            ));
        }
        if self.interpolation_endpoint > n {
            return bad(format!(
                "interpolation_endpoint {} exceeds trajectory length {n}",
                self.interpolation_endpoint
            ));
        }
        if self.max_start_epoch + self.expert_epochs > self.interpolation_endpoint {
            return bad(format!(
                "max_start_epoch + expert_epochs = {} runs past interpolation_endpoint {}",
                self.max_start_epoch + self.expert_epochs,
                self.interpolation_endpoint
            ));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0, 1]", self.ema_decay));
        }
        if self.mini_batch_size == 0 || self.mini_batch_size > self.num_queries {
            return bad(format!(
                "mini_batch_size {} must lie in 1..={}",
                self.mini_batch_size, self.num_queries
            ));
        }
        for (k, v) in [
            ("lr_img", self.lr_img),
            ("lr_txt", self.lr_txt),
            ("lr_sim", self.lr_sim),
            ("lr_lr", self.lr_lr),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{k} must be a nonnegative number"));
            }
        }
        if !(self.lr_teacher_img > 0.0) || !(self.lr_teacher_txt > 0.0) {
            return bad("initial inner step sizes must be positive".into());
        }
        if self.sim_type == SimType::LowRank && self.sim_rank == 0 {
            return bad("sim_rank must be positive".into());
        }
        Ok(())
    }
}

/// The multi-phase distillation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillPlan {
    pub phases: Vec<PhaseConfig>,
    pub buffer: PathBuf,
    pub seed: u64,
    pub teacher: TeacherMode,
    pub loss: BatchLossSpec,
}

impl DistillPlan {
    pub fn new(phases: Vec<PhaseConfig>, seed: u64) -> Self {
        DistillPlan {
            phases,
            buffer: PathBuf::from("buffer"),
            seed,
            teacher: TeacherMode::Shortcut,
            loss: BatchLossSpec::default(),
        }
    }

    pub fn total_queries(&self) -> usize {
        self.phases.iter().map(|p| p.num_queries).sum()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("plan needs at least one phase".into()));
        }
        for (p, ph) in self.phases.iter().enumerate() {
            ph.validate(n)
                .map_err(|e| Error::Config(format!("phase {}: {e}", p + 1)))?;
        }
        self.loss.validate()
    }

    /// Disjoint initialisation rows per phase: one seeded permutation of
    /// `0..m`, cut into consecutive chunks of `N_p`; each chunk sorted.
    pub fn initial_indices(&self, m: usize) -> Result<Vec<Vec<usize>>> {
        let total = self.total_queries();
        if total > m {
            return Err(Error::Capacity {
                requested: total,
                available: m,
            });
        }
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng::rng_for(self.seed, "init", 0));
        let mut out = Vec::with_capacity(self.phases.len());
        let mut start = 0;
        for ph in &self.phases {
            let mut chunk = perm[start..start + ph.num_queries].to_vec();
            chunk.sort_unstable();
            start += ph.num_queries;
            out.push(chunk);
        }
        Ok(out)
    }
}
