use rand::seq::index;

use crate::datamodel::{Matrix, ParamVector, SyntheticDataset};
use crate::error::{Error, Result};
use crate::model::{batch_loss_grad, BatchLossSpec, LossKind, TwoTowerModel};
use crate::rng;

/// Settings of one inner student run on synthetic data.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerSpec {
    pub steps: usize,
    pub mini_batch: usize,
    pub loss: BatchLossSpec,
    pub seed: u64,
}

/// Everything the reverse sweep needs: the batch drawn at every step, the
/// iterate it was taken from and the gradient that was applied.
#[derive(Clone, Debug)]
pub struct UnrollTape {
    pub start: ParamVector,
    pub batches: Vec<Vec<usize>>,
    /// `theta_k` for `k = 0..t`.
    pub iterates: Vec<Vec<f64>>,
    /// `g_k = grad l(theta_k; batch_k)`.
    pub grads: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub end: ParamVector,
}

impl UnrollTape {
    pub fn steps(&self) -> usize {
        self.batches.len()
    }

    /// Re-runs the recorded batches from `start`.
    pub fn replay(&self, model: &TwoTowerModel, syn: &SyntheticDataset, loss: &BatchLossSpec) -> Result<ParamVector> {
        let targets = dense_targets(syn, loss)?;
        let lrs = step_sizes(model, syn);
        let mut theta = self.start.as_slice().to_vec();
        for batch in &self.batches {
            let g = step_grad(model, syn, targets.as_ref(), batch, &theta, loss);
            apply_step(&mut theta, &g.1, lrs);
        }
        self.start.with_data(theta)
    }
}

/// Draws the sorted mini-batch of every inner step from `seed`.
pub fn inner_batches(n: usize, mini_batch: usize, steps: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng::rng_for(seed, "inner.batch", 0);
    (0..steps)
        .map(|_| {
            let mut b = index::sample(&mut r, n, mini_batch).into_vec();
            b.sort_unstable();
            b
        })
        .collect()
}

pub(crate) fn dense_targets(syn: &SyntheticDataset, loss: &BatchLossSpec) -> Result<Option<Matrix>> {
    match loss.kind {
        LossKind::Wbce => Ok(Some(syn.sim.reconstruct()?)),
        LossKind::InfoNce => Ok(None),
    }
}

/// Per-entry inner step sizes as `(split, lr_img, lr_txt)`.
pub(crate) fn step_sizes(model: &TwoTowerModel, syn: &SyntheticDataset) -> (usize, f64, f64) {
    (model.image_len(), syn.lr_img, syn.lr_txt)
}

pub(crate) fn apply_step(theta: &mut [f64], g: &[f64], (split, lr_img, lr_txt): (usize, f64, f64)) {
    for (i, (t, gv)) in theta.iter_mut().zip(g).enumerate() {
        let lr = if i < split { lr_img } else { lr_txt };
        *t -= lr * gv;
    }
}

pub(crate) fn step_grad(
    model: &TwoTowerModel,
    syn: &SyntheticDataset,
    targets: Option<&Matrix>,
    batch: &[usize],
    theta: &[f64],
    loss: &BatchLossSpec,
) -> (f64, Vec<f64>) {
    let x = syn.images.select_rows(batch);
    let y = syn.texts.select_rows(batch);
    let s = targets.map(|t| t.select_block(batch));
    let g = batch_loss_grad(
        model,
        theta,
        x.as_slice(),
        y.as_slice(),
        s.as_ref().map(Matrix::as_slice),
        loss,
        false,
    );
    (g.loss, g.d_params)
}

fn check(model: &TwoTowerModel, syn: &SyntheticDataset, start: &ParamVector, spec: &InnerSpec) -> Result<()> {
    if start.layers() != model.schema().as_slice() {
        return Err(Error::invalid("start parameters do not match the model schema"));
    }
    if syn.images.cols() != model.d_img || syn.texts.cols() != model.d_txt {
        return Err(Error::invalid("synthetic feature dims do not match the model"));
    }
    if spec.mini_batch == 0 || spec.mini_batch > syn.len() {
        return Err(Error::invalid(format!(
            "mini-batch {} must lie in 1..={}",
            spec.mini_batch,
            syn.len()
        )));
    }
    Ok(())
}

/// `t` plain SGD steps from `start` on seeded synthetic mini-batches, each
/// tower at its own learnable step size.
pub fn inner_unroll(
    model: &TwoTowerModel,
    syn: &SyntheticDataset,
    start: &ParamVector,
    spec: &InnerSpec,
) -> Result<UnrollTape> {
    check(model, syn, start, spec)?;
    let targets = dense_targets(syn, &spec.loss)?;
    let lrs = step_sizes(model, syn);
    let batches = inner_batches(syn.len(), spec.mini_batch, spec.steps, spec.seed);
    let mut theta = start.as_slice().to_vec();
    let mut iterates = Vec::with_capacity(spec.steps);
    let mut grads = Vec::with_capacity(spec.steps);
    let mut losses = Vec::with_capacity(spec.steps);
    for (k, batch) in batches.iter().enumerate() {
        let (l, g) = step_grad(model, syn, targets.as_ref(), batch, &theta, &spec.loss);
        iterates.push(theta.clone());
        apply_step(&mut theta, &g, lrs);
        if !l.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::UnrollDivergence { step: k + 1 });
        }
        grads.push(g);
        losses.push(l);
    }
    Ok(UnrollTape {
        start: start.clone(),
        batches,
        iterates,
        grads,
        losses,
        end: start.with_data(theta)?,
    })
}
