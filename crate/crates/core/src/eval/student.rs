use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Matrix, PairDataset, ParamVector, SyntheticDataset};
use crate::error::{Error, Result};
use crate::model::{retrieval_scores, BatchLossSpec, LossKind, RetrievalReport, TwoTowerModel};
use crate::rng;
use crate::trajectory::SgdMomentum;

/// Student training and evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Epochs per subset.
    pub epochs: usize,
    /// Upper bound on the batch; the effective batch is `min(batch_size, N)`.
    pub batch_size: usize,
    pub lr_img: f64,
    pub lr_txt: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ks: Vec<usize>,
    /// Train each subset at its learned inner step sizes instead of `lr_*`.
    pub use_learned_lr: bool,
    pub loss: BatchLossSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epochs: 20,
            batch_size: 64,
            lr_img: 0.1,
            lr_txt: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            ks: vec![1, 5, 10],
            use_learned_lr: false,
            loss: BatchLossSpec::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.ks.is_empty() || self.ks.windows(2).any(|w| w[0] >= w[1]) || self.ks[0] == 0 {
            return Err(Error::Config("K list must be positive and strictly ascending".into()));
        }
        if !(self.lr_img >= 0.0) || !(self.lr_txt >= 0.0) {
            return Err(Error::Config("student step sizes must be nonnegative".into()));
        }
        self.loss.validate()
    }
}

/// Trains a fresh student on `subsets` in order. Optimizer state and the
/// batch stream carry over from one subset to the next.
pub fn train_student(
    model: &TwoTowerModel,
    subsets: &[SyntheticDataset],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ParamVector> {
    cfg.validate()?;
    let mut params = model.init(&mut rng::rng_for(seed, "student.init", 0));
    let split = model.image_len();
    let mut opt_img = SgdMomentum::new(split, cfg.momentum, cfg.weight_decay);
    let mut opt_txt = SgdMomentum::new(params.len() - split, cfg.momentum, cfg.weight_decay);
    let mut shuffle = rng::rng_for(seed, "student.batch", 0);
    for (i, sub) in subsets.iter().enumerate() {
        sub.validate()?;
        if sub.images.cols() != model.d_img || sub.texts.cols() != model.d_txt {
            return Err(Error::invalid(format!("subset {} does not match the student dims", i + 1)));
        }
        let targets = sub.sim.reconstruct()?;
        let (lr_img, lr_txt) = if cfg.use_learned_lr {
            (sub.lr_img, sub.lr_txt)
        } else {
            (cfg.lr_img, cfg.lr_txt)
        };
        let spec = cfg.loss;
        let b = cfg.batch_size.min(sub.len());
        for _ in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..sub.len()).collect();
            order.shuffle(&mut shuffle);
            for batch in order.chunks(b) {
                if spec.kind == LossKind::InfoNce && batch.len() < 2 {
                    continue;
                }
                let mut idx = batch.to_vec();
                idx.sort_unstable();
                let x = sub.images.select_rows(&idx);
                let y = sub.texts.select_rows(&idx);
                let s: Option<Matrix> = (spec.kind == LossKind::Wbce).then(|| targets.select_block(&idx));
                let (loss, g) = model
                    .loss_and_grad(&params, &x, &y, s.as_ref(), &spec)
                    .map_err(|_| Error::StudentDivergence { subset: i + 1 })?;
                if !loss.is_finite() {
                    return Err(Error::StudentDivergence { subset: i + 1 });
                }
                let (p_img, p_txt) = params.as_mut_slice().split_at_mut(split);
                let (g_img, g_txt) = g.as_slice().split_at(split);
                opt_img.step(p_img, g_img, lr_img);
                opt_txt.step(p_txt, g_txt, lr_txt);
            }
            if params.check_finite().is_err() {
                return Err(Error::StudentDivergence { subset: i + 1 });
            }
        }
    }
    Ok(params)
}

/// Recall@K of `params` on `test`.
pub fn evaluate_student(
    model: &TwoTowerModel,
    params: &ParamVector,
    test: &PairDataset,
    ks: &[usize],
) -> Result<RetrievalReport> {
    let (u, v) = model.embed(params, &test.images, &test.texts)?;
    retrieval_scores(&u, &v, ks)
}

/// Progressive training on the ordered subsets, scored on `test`.
pub fn train_student_progressive(
    model: &TwoTowerModel,
    subsets: &[SyntheticDataset],
    cfg: &EvalConfig,
    test: &PairDataset,
    seed: u64,
) -> Result<RetrievalReport> {
    let params = train_student(model, subsets, cfg, seed)?;
    evaluate_student(model, &params, test, &cfg.ks)
}

/// Per-metric mean and sample standard deviation over several reports.
pub fn aggregate_reports(reports: &[RetrievalReport]) -> Vec<(String, f64, f64)> {
    if reports.is_empty() {
        return Vec::new();
    }
    let mut rows: Vec<(String, Vec<f64>)> = reports[0].metrics().into_iter().map(|(k, v)| (k, vec![v])).collect();
    rows.push(("mean".into(), vec![reports[0].mean()]));
    for r in &reports[1..] {
        let mut vals: Vec<f64> = r.metrics().into_iter().map(|(_, v)| v).collect();
        vals.push(r.mean());
        for (row, v) in rows.iter_mut().zip(vals) {
            row.1.push(v);
        }
    }
    rows.into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (k, mean, var.sqrt())
        })
        .collect()
}
