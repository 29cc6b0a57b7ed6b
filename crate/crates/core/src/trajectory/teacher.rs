use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::TrajectorySource;
use crate::datamodel::{Checkpoint, PairDataset, ParamVector};
use crate::error::{Error, Result};
use crate::model::{BatchLossSpec, LossKind, TwoTowerModel};
use crate::rng;

/// SGD with heavy-ball momentum and coupled weight decay:
///
/// ```text
/// g' = g + wd * theta
/// v  = mu * v + g'
/// theta -= lr * v
/// ```
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            velocity: vec![0.0; len],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.velocity.len());
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let g = g + self.weight_decay * *p;
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

/// One momentum step on a whole [`ParamVector`]; `velocity` persists
/// between calls and is created on first use.
pub fn sgd_momentum_step(
    params: &ParamVector,
    grads: &ParamVector,
    velocity: &mut Vec<f64>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<ParamVector> {
    params.ensure_compatible(grads)?;
    if velocity.is_empty() {
        velocity.resize(params.len(), 0.0);
    }
    if velocity.len() != params.len() {
        return Err(Error::invalid("velocity length differs from parameters"));
    }
    let mut opt = SgdMomentum {
        momentum,
        weight_decay,
        velocity: std::mem::take(velocity),
    };
    let mut out = params.clone();
    opt.step(out.as_mut_slice(), grads.as_slice(), lr);
    *velocity = opt.velocity;
    Ok(out)
}

/// Teacher training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub hidden: usize,
    pub embed: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_img: f64,
    pub lr_txt: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub tau_c: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            hidden: 32,
            embed: 16,
            epochs: 10,
            batch_size: 128,
            lr_img: 0.1,
            lr_txt: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            tau_c: 0.07,
        }
    }
}

impl TeacherConfig {
    pub fn model_for(&self, data: &PairDataset) -> Result<TwoTowerModel> {
        TwoTowerModel::new(data.d_img(), data.d_txt(), self.hidden, self.embed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub lr_img: f64,
    pub lr_txt: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Checkpoints `theta_0 .. theta_n` of one expert run, one per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTrajectory {
    pub expert_id: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub meta: TrainingMeta,
}

impl TeacherTrajectory {
    pub fn new(expert_id: usize, checkpoints: Vec<Checkpoint>, meta: TrainingMeta) -> Result<Self> {
        let t = TeacherTrajectory {
            expert_id,
            checkpoints,
            meta,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.len() < 2 {
            return Err(Error::invalid("trajectory needs at least two checkpoints"));
        }
        let first = &self.checkpoints[0].params;
        for (i, c) in self.checkpoints.iter().enumerate() {
            if c.epoch != i {
                return Err(Error::invalid(format!("checkpoint {i} has epoch {}", c.epoch)));
            }
            if !c.params.is_compatible(first) {
                return Err(Error::invalid(format!("checkpoint {i} has a different schema")));
            }
        }
        Ok(())
    }

    /// Final epoch `n`.
    pub fn epochs(&self) -> usize {
        self.checkpoints.len() - 1
    }

    pub fn params(&self, epoch: usize) -> &ParamVector {
        &self.checkpoints[epoch].params
    }

    pub fn bitwise_eq(&self, other: &TeacherTrajectory) -> bool {
        self.expert_id == other.expert_id
            && self.meta == other.meta
            && self.checkpoints.len() == other.checkpoints.len()
            && self
                .checkpoints
                .iter()
                .zip(&other.checkpoints)
                .all(|(a, b)| a.epoch == b.epoch && a.params.bitwise_eq(&b.params))
    }
}

impl TrajectorySource for TeacherTrajectory {
    fn horizon(&self) -> usize {
        self.epochs()
    }

    fn checkpoint(&self, t: usize) -> &ParamVector {
        self.params(t)
    }
}

/// Trains one expert with InfoNCE and records a checkpoint after
/// initialisation and after every epoch. Incomplete trailing batches of fewer
/// than two pairs are skipped.
pub fn train_teacher(
    real: &PairDataset,
    cfg: &TeacherConfig,
    expert_id: usize,
    seed: u64,
) -> Result<TeacherTrajectory> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("teacher needs at least one epoch"));
    }
    if cfg.batch_size < 2 {
        return Err(Error::invalid("InfoNCE batches need at least two pairs"));
    }
    let model = cfg.model_for(real)?;
    let spec = BatchLossSpec {
        kind: LossKind::InfoNce,
        tau_c: cfg.tau_c,
        ..BatchLossSpec::default()
    };
    let mut params = model.init(&mut rng::rng_for(seed, "teacher.init", 0));
    let split = model.image_len();
    let mut opt_img = SgdMomentum::new(split, cfg.momentum, cfg.weight_decay);
    let mut opt_txt = SgdMomentum::new(params.len() - split, cfg.momentum, cfg.weight_decay);
    let mut shuffle = rng::rng_for(seed, "teacher.shuffle", 0);

    let mut checkpoints = vec![Checkpoint {
        epoch: 0,
        params: params.clone(),
    }];
    let mut order: Vec<usize> = (0..real.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = real.images.select_rows(batch);
            let y = real.texts.select_rows(batch);
            let (loss, g) = match model.loss_and_grad(&params, &x, &y, None, &spec) {
                Ok(v) => v,
                Err(_) if params.check_finite().is_err() => return Err(Error::TrainingFailure { epoch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::TrainingFailure { epoch });
            }
            let (p_img, p_txt) = params.as_mut_slice().split_at_mut(split);
            let (g_img, g_txt) = g.as_slice().split_at(split);
            opt_img.step(p_img, g_img, cfg.lr_img);
            opt_txt.step(p_txt, g_txt, cfg.lr_txt);
        }
        if params.check_finite().is_err() {
            return Err(Error::TrainingFailure { epoch });
        }
        checkpoints.push(Checkpoint {
            epoch,
            params: params.clone(),
        });
    }
    TeacherTrajectory::new(
        expert_id,
        checkpoints,
        TrainingMeta {
            lr_img: cfg.lr_img,
            lr_txt: cfg.lr_txt,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            batch_size: cfg.batch_size,
            seed,
        },
    )
}
